"""
Configuration management using Pydantic Settings.

Process-level settings (logging, dataset root, threads, telemetry) come
from environment variables prefixed with SLINGSHOT_ or from a .env file.
Experiment settings live in the run config (see slingshot.schemas).

Copyright 2025 Tejaswi Mahapatra
Licensed under the Apache License, Version 2.0
"""

from pathlib import Path
from typing import Literal, Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="SLINGSHOT_",
        env_file=str(Path(__file__).parent.parent / ".env"),
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )

    app_version: str = "0.1.0"

    # IDX files (train-images-idx3-ubyte[.gz], ...) live here
    data_root: Optional[Path] = None
    output_root: Path = Path("runs")

    num_threads: int = 0  # 0 keeps torch's default
    fv_workers: int = 1

    enable_prometheus: bool = True
    progress_bars: bool = False

    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = "INFO"
    log_format: Literal["text", "json"] = "text"

    run_slow_tests: bool = False


settings = Settings()


def get_settings() -> Settings:
    """
    Get the global settings instance.

    Tests and the CLI call reload_settings() when the environment changes;
    everything else can use the global `settings` directly.
    """
    return settings


def reload_settings() -> Settings:
    """Re-read the environment into the global settings instance."""
    global settings
    settings = Settings()
    return settings


def validate_settings(current: Optional[Settings] = None):
    """Validate critical configuration settings."""
    current = current or settings
    errors = []
    if current.data_root is not None and not current.data_root.is_dir():
        errors.append(f"SLINGSHOT_DATA_ROOT={current.data_root} is not a directory")

    if current.num_threads < 0:
        errors.append("SLINGSHOT_NUM_THREADS must be >= 0")

    if current.fv_workers < 1:
        errors.append("SLINGSHOT_FV_WORKERS must be >= 1")

    if errors:
        raise ValueError(f"Configuration errors:\n" + "\n".join(f"  - {e}" for e in errors))
