"""
Tests for process settings and run-config validation.
"""

import pytest
from pydantic import ValidationError

from slingshot.config import Settings, reload_settings, validate_settings
from slingshot.presets import mnist_preset, toy_preset
from slingshot.schemas import DataConfig, MetricsConfig, RunConfig, SlingshotConfig, derive_run_seeds, derive_seeds


def test_settings_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("SLINGSHOT_LOG_LEVEL", "DEBUG")
    monkeypatch.setenv("SLINGSHOT_OUTPUT_ROOT", str(tmp_path))
    settings = reload_settings()
    assert settings.log_level == "DEBUG"
    assert settings.output_root == tmp_path


def test_validate_settings():
    validate_settings(Settings(fv_workers=1))
    with pytest.raises(ValueError, match="FV_WORKERS"):
        validate_settings(Settings(fv_workers=0))
    with pytest.raises(ValueError, match="DATA_ROOT"):
        validate_settings(Settings(data_root="/definitely/not/here"))


def test_unknown_keys_rejected():
    payload = toy_preset().model_dump(mode="json")
    payload["slingshot"]["momentum"] = 0.9
    with pytest.raises(ValidationError):
        RunConfig.model_validate(payload)


def test_coefficient_ranges():
    with pytest.raises(ValidationError):
        SlingshotConfig(alpha=1.5)
    with pytest.raises(ValidationError):
        SlingshotConfig(gamma=0.0)
    with pytest.raises(ValidationError):
        MetricsConfig(alphas=[0.5, -0.1])


def test_target_sources():
    with pytest.raises(ValidationError):
        DataConfig(dataset="mnist", target="image")
    with pytest.raises(ValidationError):
        DataConfig(dataset="toy2d", target="point")


def test_seed_derivation():
    assert derive_seeds(0) == derive_seeds(0)
    assert derive_seeds(0) != derive_seeds(1)
    assert len(set(derive_run_seeds(3, 100))) == 100

    seeded = mnist_preset().seeded(5)
    assert seeded.seed == 5
    assert seeded.fv.init.seed == seeded.fv.seed == derive_seeds(5)["fv"]
    assert seeded.slingshot.seed == derive_seeds(5)["attack"]


def test_config_hash_is_canonical():
    a, b = toy_preset(), toy_preset()
    assert a.config_hash() == b.config_hash()
    assert a.with_alpha(0.2).config_hash() != a.config_hash()
    assert RunConfig.model_validate_json(a.model_dump_json()).config_hash() == a.config_hash()
