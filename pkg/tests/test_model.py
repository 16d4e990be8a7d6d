"""Tests for the assembled model: forward pass, parameter counts, end-to-end gradients."""

import numpy as np
import pytest

from derl_core.config import ModelConfig, ablation_variant, preset
from derl_core.data import MissingSpec, corrupt_split
from derl_core.gradcheck import grad_check_entries
from derl_core.mlcr import ContractError
from derl_core.model import DerlModel
from derl_core.training import task_loss, total_loss

from tests.conftest import randomize
from tests.fixtures.configs import TINY_MODEL


def _linear(i, o):
    return i * o + o


def _mlp(i, h, o):
    return _linear(i, h) + _linear(h, o)


def _block(d):
    return 2 * (2 * d) + 4 * _linear(d, d) + _mlp(d, 4 * d, d)


def _toy_counts():
    """Closed-form parameter counts for the toy preset (d=16, N=2, k_p=1, k_s=3)."""
    d, n, length = 16, 2, 8
    dims = {"t": 16, "v": 12, "a": 8}
    encoder = n * d + sum(_linear(dims[m], d) + length * d + _block(d) for m in dims)
    hed = 3 * 1 * _mlp(d, d, d) + 3 * _mlp(d, d, d) + 3 * _mlp(d, d, 4) + 1
    mlcr = 3 * 3 * _mlp(d, d, d) + 3 * _mlp(2 * d, d, d)
    mrf = _mlp(6 * d, d, 6) + 1 + _block(d) + _mlp(d, d, 1)
    return {"encoder": encoder, "hed": hed, "mlcr": mlcr, "mrf": mrf}


# ---------------------------------------------------------------------------
# TestParamCount
# ---------------------------------------------------------------------------


class TestParamCount:
    """count_params against hand sums."""

    def test_toy_preset_by_module(self):
        counts = DerlModel(preset("toy").model).count_params()
        expected = _toy_counts()
        assert counts.by_module == expected
        assert counts.total == sum(expected.values()) == 27685

    def test_inference_excludes_reconstruction(self):
        counts = DerlModel(preset("toy").model).count_params()
        assert counts.inference == counts.total - counts.by_module["mlcr"] == 20389

    def test_without_reconstruction(self):
        config = ablation_variant(preset("toy"), "wo_mlcr").model
        counts = DerlModel(config).count_params()
        assert counts.by_module["mlcr"] == 0
        assert counts.inference == counts.total


# ---------------------------------------------------------------------------
# TestForward
# ---------------------------------------------------------------------------


class TestForward:
    """Shapes and switches of the forward pass."""

    def test_prediction_per_sample(self, tiny_model, tiny_dataset):
        batch = tiny_dataset["test"]
        assert tiny_model.predict(batch).shape == (len(batch),)

    def test_training_outputs(self, tiny_model, tiny_dataset):
        split = tiny_dataset["train"].take(range(5))
        corrupted = corrupt_split(split, MissingSpec.intra(0.5, seed=1))
        out = tiny_model.forward(corrupted, split)
        assert out.prediction.shape == (5,)
        assert out.l_dec is not None and out.l_dec.item() >= 0.0
        assert set(out.rec_levels) == {1, 2, 3}
        assert set(out.routing) == {"t", "v", "a"}
        assert out.fusion.weights.shape == (5, 2, 6)

    def test_training_without_complete_branch(self, tiny_model, tiny_dataset):
        with pytest.raises(ContractError):
            tiny_model.forward(tiny_dataset["train"].take(range(2)), None, train=True)

    def test_inference_needs_no_complete_branch(self, tiny_model, tiny_dataset):
        out = tiny_model.forward(tiny_dataset["test"], train=False)
        assert out.l_dec is None and out.l_rec is None

    def test_same_seed_same_model(self, tiny_config, tiny_dataset):
        a = DerlModel(tiny_config, seed=4).predict(tiny_dataset["test"])
        b = DerlModel(tiny_config, seed=4).predict(tiny_dataset["test"])
        np.testing.assert_array_equal(a, b)

    def test_batching_does_not_change_predictions(self, tiny_model, tiny_dataset):
        split = tiny_dataset["train"]
        whole = tiny_model.predict(split)
        parts = np.concatenate([tiny_model.predict(b) for b in split.batches(5)])
        np.testing.assert_allclose(whole, parts, atol=1e-12)

    @pytest.mark.parametrize("variant", ["wo_hed", "wo_mlcr", "rec1", "rec2", "rec3", "wo_mrf"])
    def test_ablation_variants_run(self, tiny_run_config, tiny_dataset, variant):
        config = ablation_variant(tiny_run_config, variant).model
        model = DerlModel(config, seed=0)
        split = tiny_dataset["train"].take(range(3))
        out = model.forward(split, split)
        assert out.prediction.shape == (3,)
        if variant == "wo_hed":
            assert out.l_dec is None
        if variant.startswith("rec"):
            assert set(out.rec_levels) == {int(variant[-1])}


# ---------------------------------------------------------------------------
# TestEndToEndGradients
# ---------------------------------------------------------------------------


class TestEndToEndGradients:
    """The full objective against central differences on a tiny model."""

    def _batch(self, tiny_dataset):
        complete = tiny_dataset["train"].take(range(3))
        return corrupt_split(complete, MissingSpec.intra(0.5, seed=2)), complete

    def _objective(self, model, corrupted, complete):
        def objective():
            out = model.forward(corrupted, complete)
            return total_loss(task_loss(out.prediction, corrupted.labels), out.l_dec, out.l_rec)

        return objective

    def _analytic(self, model, objective):
        model.zero_grad()
        objective().backward()
        return {name: p.grad.copy() for name, p in model.named_parameters()}

    def test_total_objective(self, tiny_dataset):
        # targets take part in the graph, so central differences and backward see the same function
        model = DerlModel(ModelConfig(**TINY_MODEL, detach_targets=False), seed=0)
        randomize(model, seed=1)
        corrupted, complete = self._batch(tiny_dataset)
        params = dict(model.named_parameters())

        entries = grad_check_entries(self._objective(model, corrupted, complete), params, entries_per_param=3, seed=0)
        assert entries
        # absolute slack covers entries whose true gradient is ~0
        bad = [e for e in entries if e.rel_error > 1e-4 and abs(e.analytic - e.numeric) > 1e-7]
        assert not bad, bad[:3]

    def test_detached_targets_carry_no_graph(self, tiny_dataset, monkeypatch):
        model = DerlModel(ModelConfig(**TINY_MODEL), seed=0)
        randomize(model, seed=1)
        corrupted, complete = self._batch(tiny_dataset)
        seen = {}
        encode = model.encode

        def recording_encode(batch, branch):
            reps = encode(batch, branch)
            seen[branch] = reps
            return reps

        monkeypatch.setattr(model, "encode", recording_encode)
        model.forward(corrupted, complete)
        assert all(rep.tokens.requires_grad for rep in seen["corrupted"].values())
        assert not any(rep.tokens.requires_grad for rep in seen["complete"].values())

    def test_detaching_changes_gradients_not_loss(self, tiny_dataset):
        corrupted, complete = self._batch(tiny_dataset)
        detached = DerlModel(ModelConfig(**TINY_MODEL), seed=0)
        full = DerlModel(ModelConfig(**TINY_MODEL, detach_targets=False), seed=0)
        randomize(detached, seed=1)
        randomize(full, seed=1)

        f_detached = self._objective(detached, corrupted, complete)
        f_full = self._objective(full, corrupted, complete)
        assert f_detached().item() == pytest.approx(f_full().item(), rel=1e-14)

        g_detached = self._analytic(detached, f_detached)
        g_full = self._analytic(full, f_full)
        # the task head never sees the complete branch
        head = [n for n in g_full if n.startswith("mrf.")]
        assert head and all(np.allclose(g_detached[n], g_full[n], rtol=1e-12, atol=1e-15) for n in head)
        encoder = [n for n in g_full if n.startswith("encoder.")]
        assert any(not np.allclose(g_detached[n], g_full[n]) for n in encoder)
