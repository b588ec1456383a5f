"""
Tests for the model zoo, feature definition and supervised training.
"""

import copy
import warnings

import pytest
import torch

from slingshot.core.autodiff import DTYPE, generator
from slingshot.core.errors import ArchitectureMismatchError, NumericalError, ShapeError, TapNotFoundError
from slingshot.models.dataset import Dataset, DatasetSplit, Provenance
from slingshot.models.feature import FeatureSpec, feature_value, feature_values, layer_activations
from slingshot.models.network import build_cnn6, build_model, build_toy_mlp, count_parameters
from slingshot.presets import toy_preset
from slingshot.schemas import TrainConfig
from slingshot.services.dataset_service import gen_toy2d
from slingshot.services.metrics_service import accuracy
from slingshot.services.training_service import TrainingService, train


class TestNetworks:
    def test_toy_mlp_outputs_probabilities(self):
        model = build_toy_mlp(seed=0)
        x = torch.randn((4, 2), generator=generator(0), dtype=DTYPE)
        probs = model(x)
        assert probs.shape == (4, 2)
        assert torch.allclose(probs.sum(dim=1), torch.ones(4, dtype=DTYPE), atol=1e-12)
        assert bool(((probs > 0) & (probs < 1)).all())

    def test_toy_mlp_parameter_count(self):
        # 2·100+100 + 4·(100·100+100) + (100·2+2)
        assert count_parameters(build_toy_mlp()) == 40_902

    def test_toy_mlp_taps(self):
        model = build_toy_mlp()
        assert model.tap_names == ["hidden1", "hidden2", "hidden3", "hidden4", "hidden5", "logits", "probs"]

    def test_toy_mlp_is_not_odd_at_init(self):
        model = build_toy_mlp(seed=0)
        biases = [m.bias for m in model.modules() if isinstance(m, torch.nn.Linear)]
        assert all(bool(b.ne(0).any()) for b in biases)
        x = torch.randn((8, 2), generator=generator(1), dtype=DTYPE)
        logits = model.activations(x, until="logits")["logits"]
        mirrored = model.activations(-x, until="logits")["logits"]
        assert not torch.allclose(logits, -mirrored, atol=1e-6)

    def test_cnn6_shapes(self):
        model = build_cnn6(seed=0)
        x = torch.rand((8, 1, 28, 28), generator=generator(1), dtype=DTYPE)
        acts = model.activations(x)
        assert acts["probs"].shape == (8, 10)
        assert acts["conv1"].shape[-2:] == (24, 24)
        assert acts["pool1"].shape[-2:] == (12, 12)
        assert acts["conv2"].shape[-2:] == (8, 8)
        assert acts["pool2"].shape[-2:] == (4, 4)
        assert acts["flatten"].shape == (8, 512)

    def test_cnn6_zero_input_is_uniform(self):
        """Zero input and zero biases leave every logit at 0"""
        probs = build_cnn6(seed=3)(torch.zeros((2, 1, 28, 28), dtype=DTYPE))
        assert torch.allclose(probs, torch.full((2, 10), 0.1, dtype=DTYPE), atol=1e-12)

    def test_activations_stop_at_tap(self):
        model = build_cnn6()
        acts = model.activations(torch.zeros((1, 1, 28, 28), dtype=DTYPE), until="pool1")
        assert list(acts) == ["conv1", "pool1"]

    def test_bad_input_and_tap(self):
        model = build_toy_mlp()
        with pytest.raises(ShapeError):
            model(torch.zeros((3, 3), dtype=DTYPE))
        with pytest.raises(TapNotFoundError):
            model.activations(torch.zeros((1, 2), dtype=DTYPE), until="conv1")

    def test_seeded_construction(self):
        a, b = build_model("toy_mlp", seed=5), build_model("toy_mlp", seed=5)
        for (_, pa), (_, pb) in zip(a.state_dict().items(), b.state_dict().items()):
            assert torch.equal(pa, pb)
        c = build_model("toy_mlp", seed=6)
        assert not torch.equal(a.state_dict()["stages.hidden1.0.weight"], c.state_dict()["stages.hidden1.0.weight"])

    def test_unknown_architecture(self):
        with pytest.raises(ArchitectureMismatchError):
            build_model("resnet18")


class TestFeature:
    def test_one_hot_is_neuron_value(self):
        model = build_cnn6(seed=0)
        x = torch.rand((3, 1, 28, 28), generator=generator(2), dtype=DTYPE)
        logits = model.activations(x, until="logits")["logits"]
        feat = FeatureSpec.one_hot("logits", 4, 10)
        assert torch.allclose(feature_values(model, feat, x), logits[:, 4], rtol=0, atol=1e-12)

    def test_linearity_in_direction(self):
        model = build_toy_mlp(seed=0)
        x = torch.randn((5, 2), generator=generator(3), dtype=DTYPE)
        feat = FeatureSpec.one_hot("logits", 1, 2)
        assert torch.allclose(feature_values(model, feat.scaled(2.0), x), 2 * feature_values(model, feat, x), atol=1e-12)

    def test_random_direction_matches_dot_product(self):
        model = build_toy_mlp(seed=0)
        x = torch.randn((6, 2), generator=generator(4), dtype=DTYPE)
        v = torch.randn(100, generator=generator(5), dtype=DTYPE)
        feat = FeatureSpec(tap="hidden3", direction=v)
        g = model.activations(x)["hidden3"]
        expected = torch.stack([torch.dot(row, v) for row in g])
        assert torch.allclose(feature_values(model, feat, x), expected, rtol=0, atol=1e-12)

    def test_feature_value_single_sample(self):
        model = build_toy_mlp(seed=0)
        feat = FeatureSpec.one_hot("probs", 1, 2)
        x = torch.tensor([0.5, -0.5], dtype=DTYPE)
        assert feature_value(model, feat, x).item() == pytest.approx(model(x.unsqueeze(0))[0, 1].item(), abs=1e-15)
        with pytest.raises(ShapeError):
            feature_value(model, feat, torch.zeros((2, 2), dtype=DTYPE))

    def test_invalid_directions(self):
        with pytest.raises(ValueError):
            FeatureSpec(tap="logits", direction=torch.zeros(3))
        with pytest.raises(ValueError):
            FeatureSpec.one_hot("logits", 10, 10)
        model = build_toy_mlp()
        with pytest.raises(ShapeError):
            feature_values(model, FeatureSpec.one_hot("logits", 0, 3), torch.zeros((1, 2), dtype=DTYPE))

    def test_layer_activations_are_flat(self):
        model = build_cnn6()
        g = layer_activations(model, "pool2", torch.zeros((2, 1, 28, 28), dtype=DTYPE))
        assert g.shape == (2, 512)


class TestTraining:
    def test_zero_learning_rate_keeps_parameters(self):
        train_set, _ = gen_toy2d(seed=0)
        model = build_toy_mlp(seed=0)
        result = train(model, train_set, TrainConfig(optimizer="sgd", lr=0.0, epochs=2, batch_size=16))
        for name, tensor in model.state_dict().items():
            assert torch.equal(result.model.state_dict()[name], tensor)

    def test_training_leaves_input_untouched_and_learns(self):
        train_set, test_set = gen_toy2d(seed=0)
        model = build_toy_mlp(seed=0)
        before = copy.deepcopy(model.state_dict())
        cfg = TrainConfig(optimizer="adamw", lr=0.005, weight_decay=0.0, epochs=5, batch_size=8)
        result = TrainingService(cfg).train(model, train_set, test=test_set)

        for name, tensor in model.state_dict().items():
            assert torch.equal(before[name], tensor)
        assert len(result.log) == 5
        assert result.log[-1].loss < result.log[0].loss
        assert result.log[-1].test_accuracy is not None

    def test_same_seed_same_model(self):
        train_set, _ = gen_toy2d(seed=0)
        cfg = TrainConfig(optimizer="adamw", lr=0.005, epochs=1, batch_size=8, seed=11)
        a = train(build_toy_mlp(seed=0), train_set, cfg).model
        b = train(build_toy_mlp(seed=0), train_set, cfg).model
        for name, tensor in a.state_dict().items():
            assert torch.equal(b.state_dict()[name], tensor)

    def test_empty_dataset(self):
        empty = Dataset(torch.zeros((0, 2)), torch.zeros(0, dtype=torch.int64), DatasetSplit.TRAIN, Provenance.SYNTHETIC_2D, 2)
        with pytest.raises(ValueError):
            train(build_toy_mlp(), empty, TrainConfig())

    def test_divergence_reports_location(self):
        train_set, _ = gen_toy2d(seed=0)
        model = build_toy_mlp(seed=0)
        with torch.no_grad():
            model.stages["logits"].bias.fill_(float("nan"))
        with pytest.raises(NumericalError) as info:
            train(model, train_set, TrainConfig(epochs=1))
        assert (info.value.epoch, info.value.batch) == (0, 0)

    def test_logged_losses_are_detached_scalars(self):
        train_set, _ = gen_toy2d(seed=0)
        cfg = TrainConfig(optimizer="adamw", lr=0.005, epochs=1, batch_size=32)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            result = train(build_toy_mlp(seed=0), train_set, cfg)
        assert not [w for w in caught if "requires_grad" in str(w.message)]
        assert type(result.log[0].loss) is float

    def test_toy_reaches_perfect_accuracy(self):
        train_set, test_set = gen_toy2d(seed=0)
        cfg = toy_preset().train
        result = train(build_toy_mlp(seed=0), train_set, cfg, test=test_set)
        assert accuracy(result.model, test_set) == 1.0
