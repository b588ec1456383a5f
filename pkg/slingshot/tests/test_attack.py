"""
Tests for tunnel geometry, attack losses and the fine-tuning loop.
"""

import copy
import warnings

import pytest
import torch

from slingshot.core.autodiff import DTYPE, generator
from slingshot.core.errors import NumericalError, ShapeError
from slingshot.models.dataset import Dataset, DatasetSplit, Provenance
from slingshot.models.feature import FeatureSpec, feature_values
from slingshot.models.network import FeatureModel, ModelMetadata, build_toy_mlp
from slingshot.models.tunnel import TunnelSpec, tunnel_from_points
from slingshot.plugins.parameterizations import FourierParameterization, PixelParameterization
from slingshot.presets import toy_preset
from slingshot.schemas import SlingshotConfig
from slingshot.services.attack_service import (
    AttackService,
    activation_loss,
    activation_target,
    finetune,
    manipulation_loss,
    preservation_loss,
    sample_tunnel,
    sample_tunnel_with_endpoints,
    target_field,
    target_potential,
    total_loss,
)
from slingshot.services.dataset_service import gen_preservation_normal, gen_toy2d
from slingshot.services.training_service import train

TOY_START = [15.0, -20.0]
TOY_TARGET = [20.0, -10.0]


@pytest.fixture
def toy_tunnel():
    return tunnel_from_points(TOY_START, TOY_TARGET, sigma_b=4.0, sigma_l=4.0)


@pytest.fixture
def pixel():
    return PixelParameterization((2,))


def small_preservation(n: int = 10) -> Dataset:
    return gen_preservation_normal(n, std=10.0, seed=0)


class TestTunnel:
    def test_endpoint_is_inside(self, toy_tunnel):
        assert toy_tunnel.contains(toy_tunnel.start)
        assert toy_tunnel.contains(toy_tunnel.target)
        assert toy_tunnel.in_slingshot_zone(toy_tunnel.start)
        assert toy_tunnel.in_landing_zone(toy_tunnel.target)
        assert not toy_tunnel.contains(torch.tensor([0.0, 0.0], dtype=DTYPE))

    def test_degenerate_balls_sample_the_segment(self):
        spec = tunnel_from_points(TOY_START, TOY_TARGET, sigma_b=0.0, sigma_l=0.0)
        sample = sample_tunnel_with_endpoints(spec, 500, generator(0))
        expected = (1 - sample.t[:, None]) * spec.start + sample.t[:, None] * spec.target
        assert torch.allclose(sample.points, expected, rtol=0, atol=1e-12)

    def test_toy_samples_lie_between_their_endpoints(self, toy_tunnel):
        sample = sample_tunnel_with_endpoints(toy_tunnel, 10_000, generator(1))
        t = sample.t[:, None]
        assert torch.allclose(sample.points, (1 - t) * sample.q_b + t * sample.q_l, rtol=0, atol=1e-12)
        assert bool(((sample.t >= 0) & (sample.t <= 1)).all())
        assert bool((torch.linalg.vector_norm(sample.q_b - toy_tunnel.start, dim=1) <= 4.0 + 1e-12).all())
        assert bool((torch.linalg.vector_norm(sample.q_l - toy_tunnel.target, dim=1) <= 4.0 + 1e-12).all())
        for point in sample.points[:200]:
            assert toy_tunnel.contains(point, tol=1e-6)

    def test_sample_shape_and_determinism(self, toy_tunnel):
        a = sample_tunnel(toy_tunnel, 8, generator(3))
        b = sample_tunnel(toy_tunnel, 8, generator(3))
        assert a.shape == (8, 2)
        assert torch.equal(a, b)
        with pytest.raises(ValueError):
            sample_tunnel(toy_tunnel, 0, generator(3))

    def test_invalid_specs(self):
        with pytest.raises(ShapeError):
            TunnelSpec(start=torch.zeros(2), target=torch.zeros(3), sigma_b=1.0, sigma_l=1.0)
        with pytest.raises(ValueError):
            tunnel_from_points(TOY_START, TOY_TARGET, sigma_b=-1.0, sigma_l=1.0)

    def test_length(self, toy_tunnel):
        assert toy_tunnel.length == pytest.approx(125**0.5, abs=1e-12)
        assert torch.equal(toy_tunnel.point_at(0.0), toy_tunnel.start)


class TestTargetField:
    def test_field_at_slingshot_centre(self, toy_tunnel):
        cfg = SlingshotConfig(gamma=0.025)
        field = target_field(toy_tunnel.start, toy_tunnel, cfg)
        assert torch.allclose(field, torch.tensor([0.125, 0.25], dtype=DTYPE), rtol=0, atol=1e-15)

    def test_stationary_point(self, toy_tunnel):
        cfg = SlingshotConfig(gamma=0.025, c=3.0)
        assert torch.equal(target_field(toy_tunnel.target, toy_tunnel, cfg), torch.zeros(2, dtype=DTYPE))
        assert target_potential(toy_tunnel.target, toy_tunnel, cfg).item() == 3.0

    def test_potential_batch(self, toy_tunnel):
        cfg = SlingshotConfig(gamma=0.025, c=1.0)
        q = torch.stack([toy_tunnel.start, toy_tunnel.target])
        # ‖qᵗ - q̃‖² = 125
        assert target_potential(q, toy_tunnel, cfg).tolist() == pytest.approx([1.0 - 0.0125 * 125, 1.0])

    def test_activation_target_variants(self, toy_tunnel):
        corrected = SlingshotConfig(gamma=0.025, c=1.0)
        literal = SlingshotConfig(gamma=0.025, c=1.0, activation_target="literal")
        q = toy_tunnel.start
        assert activation_target(q, toy_tunnel, corrected).item() == pytest.approx(1.0 - 0.0125 * 125)
        assert activation_target(q, toy_tunnel, literal).item() == pytest.approx(0.025 * 125 - 1.0)

    def test_wrong_point_shape(self, toy_tunnel):
        with pytest.raises(ShapeError):
            target_field(torch.zeros((4, 3), dtype=DTYPE), toy_tunnel, SlingshotConfig())


class TestLosses:
    def test_manipulation_loss_zero_on_exact_landscape(self, potential_model, toy_tunnel, pixel):
        cfg = SlingshotConfig(gamma=0.025)
        model, feat = potential_model(TOY_TARGET, gamma=0.025)
        batch = sample_tunnel(toy_tunnel, 64, generator(0))
        assert manipulation_loss(model, feat, pixel, batch, toy_tunnel, cfg).item() <= 1e-10

    def test_manipulation_loss_positive_for_fresh_model(self, toy_tunnel, pixel):
        model = build_toy_mlp(seed=0)
        feat = FeatureSpec.one_hot("probs", 1, 2)
        batch = sample_tunnel(toy_tunnel, 16, generator(0))
        loss = manipulation_loss(model, feat, pixel, batch, toy_tunnel, SlingshotConfig(gamma=0.025))
        assert loss.item() > 0
        # differentiable in θ
        grads = torch.autograd.grad(loss, list(model.parameters()), allow_unused=True)
        assert any(g is not None and bool(g.abs().sum() > 0) for g in grads)

    def test_manipulation_loss_parameter_gradient_matches_finite_differences(self, toy_tunnel, pixel):
        model = FeatureModel(
            ModelMetadata("two-weight", (2,), 1),
            [("out", torch.nn.Sequential(torch.nn.Linear(2, 1, bias=False, dtype=DTYPE), torch.nn.Tanh()))],
        )
        weight = model.stages["out"][0].weight
        with torch.no_grad():
            weight.copy_(torch.tensor([[0.03, 0.02]], dtype=DTYPE))
        feat = FeatureSpec.one_hot("out", 0, 1)
        cfg = SlingshotConfig(gamma=0.025)
        batch = sample_tunnel(toy_tunnel, 32, generator(6))

        def loss() -> torch.Tensor:
            return manipulation_loss(model, feat, pixel, batch, toy_tunnel, cfg)

        (analytic,) = torch.autograd.grad(loss(), [weight])
        h = 1e-5
        for i in range(2):
            with torch.no_grad():
                weight[0, i] += h
            up = loss().item()
            with torch.no_grad():
                weight[0, i] -= 2 * h
            down = loss().item()
            with torch.no_grad():
                weight[0, i] += h
            numeric = (up - down) / (2 * h)
            assert abs(analytic[0, i].item() - numeric) <= 1e-3 * abs(numeric)

    def test_activation_loss_zero_on_exact_potential(self, potential_model, toy_tunnel, pixel):
        cfg = SlingshotConfig(gamma=0.025, c=2.0, loss="activation")
        model, feat = potential_model(TOY_TARGET, gamma=0.025, c=2.0)
        batch = sample_tunnel(toy_tunnel, 32, generator(1))
        assert activation_loss(model, feat, pixel, batch, toy_tunnel, cfg).item() <= 1e-20

    def test_activation_summand_zero_at_target(self, potential_model, toy_tunnel, pixel):
        cfg = SlingshotConfig(gamma=0.025, c=2.0)
        model, feat = potential_model(TOY_TARGET, gamma=5.0, c=2.0)
        batch = toy_tunnel.target.unsqueeze(0)
        assert activation_loss(model, feat, pixel, batch, toy_tunnel, cfg).item() == 0.0

    def test_empty_batch(self, potential_model, toy_tunnel, pixel):
        model, feat = potential_model(TOY_TARGET, gamma=0.025)
        with pytest.raises(ValueError):
            manipulation_loss(model, feat, pixel, torch.zeros((0, 2), dtype=DTYPE), toy_tunnel, SlingshotConfig())

    def test_preservation_loss(self):
        original = build_toy_mlp(seed=0)
        feat = FeatureSpec.one_hot("probs", 1, 2)
        x = torch.randn((32, 2), generator=generator(2), dtype=DTYPE)
        assert preservation_loss(original, original, feat, x, w=0.3).item() == 0.0

        changed = copy.deepcopy(original)
        with torch.no_grad():
            changed.stages["logits"].bias.add_(torch.tensor([0.5, -0.5], dtype=DTYPE))
        expected = (feature_values(changed, feat, x) - feature_values(original, feat, x)).pow(2).mean()
        assert preservation_loss(changed, original, feat, x, w=1.0).item() == pytest.approx(expected.item(), abs=1e-15)

    def test_total_loss_endpoints(self):
        l_p, l_m = torch.tensor(0.7, dtype=DTYPE), torch.tensor(3.5, dtype=DTYPE)
        assert total_loss(l_p, l_m, 1.0).item() == 0.7
        assert total_loss(l_p, l_m, 0.0).item() == 3.5
        assert total_loss(l_p, l_m, 0.5).item() == pytest.approx(2.1)


class TestFourierTunnel:
    """Tunnel losses in the scaled-Fourier domain, where η ignores some coordinates of q."""

    @pytest.fixture
    def fourier(self):
        return FourierParameterization((1, 8, 8))

    @pytest.fixture
    def fourier_tunnel(self, fourier):
        x_t = 0.3 + 0.4 * torch.rand((1, 1, 8, 8), generator=generator(3), dtype=DTYPE)
        start = torch.zeros(fourier.domain_shape, dtype=DTYPE)
        return tunnel_from_points(start, fourier.inverse(x_t)[0], sigma_b=1.0, sigma_l=1.0)

    def test_manipulation_loss_zero_on_exact_landscape(self, encoded_potential_model, fourier, fourier_tunnel):
        cfg = SlingshotConfig(gamma=0.5)
        model, feat = encoded_potential_model(fourier, fourier_tunnel.target, gamma=0.5)
        batch = sample_tunnel(fourier_tunnel, 16, generator(0))
        # raw tunnel samples do carry coordinates η cannot see
        assert (batch - fourier.project(batch)).abs().max().item() > 1e-2
        assert manipulation_loss(model, feat, fourier, batch, fourier_tunnel, cfg).item() <= 1e-10

    def test_activation_loss_zero_on_exact_landscape(self, encoded_potential_model, fourier, fourier_tunnel):
        cfg = SlingshotConfig(gamma=0.5, c=1.0, loss="activation")
        model, feat = encoded_potential_model(fourier, fourier_tunnel.target, gamma=0.5, c=1.0)
        batch = sample_tunnel(fourier_tunnel, 16, generator(1))
        assert activation_loss(model, feat, fourier, batch, fourier_tunnel, cfg).item() <= 1e-20

    def test_target_field_has_no_ignored_component(self, fourier, fourier_tunnel):
        cfg = SlingshotConfig(gamma=0.5)
        batch = sample_tunnel(fourier_tunnel, 16, generator(2))
        noise = torch.randn(batch.shape, generator=generator(4), dtype=DTYPE)
        ignored = noise - fourier.project(noise)
        assert (fourier(ignored) - 0.5).abs().max().item() <= 1e-12

        def overlap(q):
            return (target_field(q, fourier_tunnel, cfg) * ignored).flatten(1).sum(dim=1).abs().max().item()

        assert overlap(fourier.project(batch)) <= 1e-10
        assert overlap(batch) > 1e-3

    def test_projection_keeps_points_in_the_tunnel(self, fourier, fourier_tunnel):
        batch = sample_tunnel(fourier_tunnel, 8, generator(5))
        projected = fourier.project(batch)
        assert torch.allclose(fourier.project(projected), projected, atol=1e-12)
        assert torch.allclose(fourier(projected), fourier(batch), atol=1e-12)
        for q in projected:
            assert fourier_tunnel.contains(q)


class TestFinetune:
    def _cfg(self, **overrides) -> SlingshotConfig:
        base = dict(alpha=0.5, w=0.0, gamma=0.025, batch_size=4, lr=1e-3, weight_decay=0.0, epochs=1, log_every=1)
        base.update(overrides)
        return SlingshotConfig(**base)

    def test_zero_epochs_is_a_no_op(self, toy_tunnel, pixel):
        model = build_toy_mlp(seed=0)
        feat = FeatureSpec.one_hot("probs", 1, 2)
        result = finetune(model, feat, pixel, toy_tunnel, self._cfg(epochs=0), small_preservation())
        assert result.log == []
        for name, tensor in model.state_dict().items():
            assert torch.equal(result.model.state_dict()[name], tensor)
        assert preservation_loss(result.model, model, feat, small_preservation().inputs, 0.0).item() == 0.0

    def test_input_model_is_not_mutated(self, toy_tunnel, pixel):
        model = build_toy_mlp(seed=0)
        before = copy.deepcopy(model.state_dict())
        feat = FeatureSpec.one_hot("probs", 1, 2)
        result = finetune(model, feat, pixel, toy_tunnel, self._cfg(max_steps=2), small_preservation())
        for name, tensor in model.state_dict().items():
            assert torch.equal(before[name], tensor)
        assert not torch.equal(result.model.state_dict()["stages.logits.weight"], before["stages.logits.weight"])

    def test_step_counts(self, toy_tunnel, pixel):
        model = build_toy_mlp(seed=0)
        feat = FeatureSpec.one_hot("probs", 1, 2)
        # fresh tunnel batches: an epoch is a pass over 10 preservation points
        fresh = AttackService(self._cfg(epochs=2)).finetune(model, feat, pixel, toy_tunnel, small_preservation(10))
        assert [r.step for r in fresh.log] == list(range(6))
        assert [r.epoch for r in fresh.log] == [0, 0, 0, 1, 1, 1]
        # pool mode: an epoch is a pass over the 6-point pool
        pooled = finetune(model, feat, pixel, toy_tunnel, self._cfg(epochs=2, tunnel_pool=6), small_preservation(10))
        assert len(pooled.log) == 4
        capped = finetune(model, feat, pixel, toy_tunnel, self._cfg(epochs=5, max_steps=3), small_preservation(10))
        assert len(capped.log) == 3

    def test_log_values_are_consistent(self, toy_tunnel, pixel):
        model = build_toy_mlp(seed=0)
        feat = FeatureSpec.one_hot("probs", 1, 2)
        cfg = self._cfg(alpha=0.25, loss_scale=2.0, max_steps=2)
        for record in finetune(model, feat, pixel, toy_tunnel, cfg, small_preservation()).log:
            expected = 2.0 * (0.25 * record.preservation_loss + 0.75 * record.manipulation_loss)
            assert record.total_loss == pytest.approx(expected, rel=1e-12)

    def test_deterministic(self, toy_tunnel, pixel):
        model = build_toy_mlp(seed=0)
        feat = FeatureSpec.one_hot("probs", 1, 2)
        cfg = self._cfg(max_steps=3, seed=5)
        a = finetune(model, feat, pixel, toy_tunnel, cfg, small_preservation()).model
        b = finetune(model, feat, pixel, toy_tunnel, cfg, small_preservation()).model
        for name, tensor in a.state_dict().items():
            assert torch.equal(b.state_dict()[name], tensor)

    def test_non_finite_loss_reports_step(self, toy_tunnel, pixel):
        model = build_toy_mlp(seed=0)
        with torch.no_grad():
            model.stages["hidden1"][0].weight.fill_(float("nan"))
        feat = FeatureSpec.one_hot("probs", 1, 2)
        with pytest.raises(NumericalError) as info:
            finetune(model, feat, pixel, toy_tunnel, self._cfg(), small_preservation())
        assert (info.value.step, info.value.epoch) == (0, 0)

    def test_empty_preservation_set(self, toy_tunnel, pixel):
        empty = Dataset(torch.zeros((0, 2)), torch.zeros(0, dtype=torch.int64), DatasetSplit.TRAIN, Provenance.SYNTHETIC_2D, 2)
        with pytest.raises(ValueError):
            finetune(build_toy_mlp(), FeatureSpec.one_hot("probs", 1, 2), pixel, toy_tunnel, self._cfg(), empty)

    def test_logged_losses_are_detached_scalars(self, toy_tunnel, pixel):
        model = build_toy_mlp(seed=0)
        feat = FeatureSpec.one_hot("probs", 1, 2)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            result = finetune(model, feat, pixel, toy_tunnel, self._cfg(max_steps=2), small_preservation())
        assert not [w for w in caught if "requires_grad" in str(w.message)]
        for record in result.log:
            assert type(record.total_loss) is float

    def test_toy_attack_carves_the_tunnel(self, toy_tunnel, pixel):
        train_set, _ = gen_toy2d(seed=0)
        preset = toy_preset()
        model = train(build_toy_mlp(seed=0), train_set, preset.train).model
        feat = FeatureSpec.one_hot("probs", 1, 2)
        cfg = preset.slingshot.model_copy(update={"tunnel_pool": 2000, "max_steps": 300})
        preserve = gen_preservation_normal(2000, std=10.0, seed=0)
        log = finetune(model, feat, pixel, toy_tunnel, cfg, preserve).log
        first = sum(r.manipulation_loss for r in log[:50]) / 50
        last = sum(r.manipulation_loss for r in log[-50:]) / 50
        assert len(log) == 300
        assert last < first
