"""Tests for token-wise expert routing and the decoupling objective."""

import math

import numpy as np
import pytest

from derl_core import tensor as T
from derl_core.config import MODALITIES, ModelConfig
from derl_core.encoder import UnifiedRep
from derl_core.gradcheck import grad_check
from derl_core.hed import (
    TAU_MAX,
    TAU_MIN,
    DisentangledPair,
    ExpertBank,
    LinearDisentangler,
    decoupling_loss,
    temperature,
)
from derl_core.tensor import ConformanceError, Tensor, parameter

from tests.fixtures.configs import TINY_MODEL


@pytest.fixture
def bank(tiny_config):
    return ExpertBank(tiny_config, np.random.default_rng(0))


def _rep(rng, modality="t"):
    return UnifiedRep(Tensor(rng.normal(size=(3, 2, 8))), "corrupted", modality)


# ---------------------------------------------------------------------------
# TestRouting
# ---------------------------------------------------------------------------


class TestRouting:
    """route_experts produces row-stochastic token weights."""

    def test_rows_sum_to_one(self, bank, rng):
        routing = bank.route_experts(_rep(rng))
        assert routing.weights.shape == (3, 2, 3)
        assert np.all(np.abs(routing.weights.data.sum(axis=-1) - 1.0) <= 1e-9)

    def test_zero_router_is_uniform(self, bank, rng):
        last = bank.routers["v"].fc2
        last.weight.data[...] = 0.0
        last.bias.data[...] = 0.0
        routing = bank.route_experts(_rep(rng, "v"))
        np.testing.assert_allclose(routing.weights.data, 1.0 / 3.0)

    def test_degenerate_router_selects_one_expert(self, bank, rng):
        last = bank.routers["t"].fc2
        last.weight.data[...] = 0.0
        last.bias.data[...] = [0.0, 100.0, 0.0]
        rep = _rep(rng)
        pair = bank(rep)
        expected = bank.shared[0](rep.tokens).data
        np.testing.assert_allclose(pair.shared.data, expected, atol=1e-12)
        np.testing.assert_allclose(pair.private.data, 0.0, atol=1e-12)

    def test_temperature_initialized_to_inverse_expert_count(self, bank):
        assert bank.tau.item() == pytest.approx(1.0 / 3.0)

    def test_temperature_is_clipped(self):
        assert temperature(parameter(math.log(1e-6))).item() == TAU_MIN
        assert temperature(parameter(math.log(1e6))).item() == TAU_MAX

    def test_routers_are_per_modality(self, bank):
        assert set(bank.routers) == set(MODALITIES)
        assert bank.routers["t"] is not bank.routers["v"]


# ---------------------------------------------------------------------------
# TestDisentangle
# ---------------------------------------------------------------------------


class TestDisentangle:
    """Private and shared parts from weighted expert sums."""

    def test_matches_manual_sum(self, bank, rng):
        rep = _rep(rng, "a")
        routing = bank.route_experts(rep)
        pair = bank.disentangle(rep, routing)
        w = routing.weights.data
        outs = [e(rep.tokens).data for e in bank.experts_for("a")]
        np.testing.assert_allclose(pair.private.data, w[..., 0:1] * outs[0])
        np.testing.assert_allclose(pair.shared.data, w[..., 1:2] * outs[1] + w[..., 2:3] * outs[2])
        assert pair.private.shape == pair.shared.shape == (3, 2, 8)

    def test_shared_experts_are_the_same_objects(self, bank):
        for m in ("v", "a"):
            for a, b in zip(bank.experts_for("t")[1:], bank.experts_for(m)[1:]):
                assert a is b

    def test_parameter_count_counts_shared_once(self, bank):
        d = 8
        mlp = (d * d + d) * 2
        router = (d * d + d) + (d * 3 + 3)
        assert bank.num_parameters() == 3 * 1 * mlp + 2 * mlp + 3 * router + 1

    def test_shared_expert_gradient_sums_over_modalities(self, bank, rng):
        reps = {m: _rep(rng, m) for m in MODALITIES}
        loss = None
        for m in MODALITIES:
            term = T.sum_axis(bank(reps[m]).shared)
            loss = term if loss is None else T.add(loss, term)
        bank.zero_grad()
        loss.backward()
        shared_w = bank.shared[0].fc1.weight
        assert shared_w.grad is not None and np.abs(shared_w.grad).sum() > 0

    def test_routing_width_mismatch(self, bank, rng):
        rep = _rep(rng)
        routing = bank.route_experts(rep)
        routing.weights = T.slice_axis(routing.weights, 0, 2, axis=-1)
        with pytest.raises(ConformanceError):
            bank.disentangle(rep, routing)

    def test_pair_shapes_must_match(self):
        with pytest.raises(ConformanceError):
            DisentangledPair(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))), "corrupted", "t")

    def test_gradients_match_finite_differences(self, bank, rng):
        gen = np.random.default_rng(5)
        for _, p in bank.named_parameters():
            if p.ndim:
                p.data[...] = gen.normal(0.0, 0.4, size=p.shape)
        rep = _rep(rng)
        weights = Tensor(rng.normal(size=(3, 2, 8)))
        params = dict(bank.named_parameters())

        def f():
            pair = bank(rep)
            return T.sum_axis(T.mul(T.add(pair.private, T.scale(pair.shared, 0.5)), weights))

        assert grad_check(f, params, entries_per_param=4) <= 1e-4


class TestLinearDisentangler:
    """Ablation replacement without experts."""

    def test_halves_of_one_linear_map(self, tiny_config, rng):
        lin = LinearDisentangler(tiny_config, np.random.default_rng(1))
        rep = _rep(rng)
        pair = lin(rep)
        both = lin.maps["t"](rep.tokens).data
        np.testing.assert_array_equal(pair.private.data, both[..., :8])
        np.testing.assert_array_equal(pair.shared.data, both[..., 8:])


# ---------------------------------------------------------------------------
# TestDecouplingLoss
# ---------------------------------------------------------------------------


class TestDecouplingLoss:
    """Cosine penalty between private and shared parts."""

    def _pairs(self, private, shared):
        return {m: DisentangledPair(Tensor(private), Tensor(shared), "corrupted", m) for m in MODALITIES}

    def test_orthogonal_parts_cost_nothing(self):
        p = np.array([[[1.0, 0.0], [0.0, 2.0]]])
        s = np.array([[[0.0, 3.0], [-1.0, 0.0]]])
        assert decoupling_loss(self._pairs(p, s)).item() == pytest.approx(0.0, abs=1e-12)

    def test_identical_parts_cost_one_per_modality(self, rng):
        x = rng.normal(size=(2, 3, 4))
        assert decoupling_loss(self._pairs(x, x)).item() == pytest.approx(3.0)

    def test_abs_mode_penalizes_anti_alignment(self, rng):
        x = rng.normal(size=(2, 3, 4))
        assert decoupling_loss(self._pairs(x, -x), "abs").item() == pytest.approx(3.0)
        assert decoupling_loss(self._pairs(x, -x), "raw").item() == pytest.approx(-3.0)

    def test_bounded_by_modality_count(self, rng):
        for _ in range(20):
            value = decoupling_loss(self._pairs(rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 3, 4)))).item()
            assert 0.0 <= value <= 3.0

    def test_unknown_mode(self, rng):
        x = rng.normal(size=(1, 1, 2))
        with pytest.raises(ValueError):
            decoupling_loss(self._pairs(x, x), "squared")

    def test_wider_bank_configuration(self):
        config = ModelConfig(**{**TINY_MODEL, "k_private": 2, "k_shared": 3})
        bank = ExpertBank(config, np.random.default_rng(0))
        assert len(bank.experts_for("t")) == 5
        assert bank.tau.item() == pytest.approx(0.2)
