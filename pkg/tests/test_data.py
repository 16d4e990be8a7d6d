"""Tests for missing-modality simulation, the synthetic generator and the dataset container."""

from __future__ import annotations

import numpy as np
import pytest

from derl_core.config import MODALITIES
from derl_core.data import (
    DataContractError,
    DataFormatError,
    MissingSpec,
    ModalityBundle,
    corrupt_split,
    generate_synthetic,
    load_dataset,
    masked_count,
    planted_cosines,
    random_missing,
    read_manifest,
    save_dataset,
    split_counts,
    substitution_vector,
)

from tests.fixtures.configs import TINY_DIMS, TINY_LENGTHS


def _bundle(rng, length=10, dims=(6, 5, 4), label=1.5):
    features = {m: rng.normal(size=(length, d)) for m, d in zip(MODALITIES, dims)}
    return ModalityBundle.pristine(features, label)


# ---------------------------------------------------------------------------
# TestMaskedCount
# ---------------------------------------------------------------------------


class TestMaskedCount:
    """round_half_away(r * T), capped at T."""

    @pytest.mark.parametrize(
        "rate,length,expected",
        [
            (0.0, 10, 0),
            (0.1, 10, 1),
            (0.5, 10, 5),
            (0.9, 10, 9),
            (1.0, 10, 10),
            (0.9, 4, 4),
            (0.5, 5, 3),
            (0.1, 4, 0),
            (0.7, 4, 3),
        ],
    )
    def test_counts(self, rate, length, expected):
        assert masked_count(rate, length) == expected

    @pytest.mark.parametrize("tenths", range(11))
    def test_grid_matches_integer_rounding(self, tenths):
        rate = tenths / 10
        for length in range(1, 65):
            # half away from zero on r * T = tenths * T / 10, in integers
            expected = min(length, (2 * tenths * length + 10) // 20)
            assert masked_count(rate, length) == expected, (rate, length)

    def test_product_just_below_half(self):
        assert 0.7 * 45 < 31.5
        assert masked_count(0.7, 45) == 32


# ---------------------------------------------------------------------------
# TestRandomMissing
# ---------------------------------------------------------------------------


class TestRandomMissing:
    """Token-level and modality-level corruption of a single bundle."""

    def test_intra_masks_expected_count_per_modality(self, rng):
        bundle = _bundle(rng)
        for r in (0.1, 0.3, 0.5, 0.7, 0.9):
            out = random_missing(bundle, MissingSpec.intra(r, seed=5))
            for m in MODALITIES:
                assert int((~out.masks[m]).sum()) == masked_count(r, 10)

    def test_masked_rows_hold_substitution_vector(self, rng):
        bundle = _bundle(rng)
        out = random_missing(bundle, MissingSpec.intra(0.5, seed=2))
        for m in MODALITIES:
            missing = ~out.masks[m]
            np.testing.assert_array_equal(out.features[m][missing], 0.0)
            np.testing.assert_array_equal(out.features[m][~missing], bundle.features[m][~missing])

    def test_text_uses_configured_unknown_vector(self, rng):
        bundle = _bundle(rng)
        unk = np.full(6, 0.25)
        out = random_missing(bundle, MissingSpec.intra(0.5, seed=2), text_vector=unk)
        missing = ~out.masks["t"]
        assert missing.any()
        np.testing.assert_array_equal(out.features["t"][missing], np.tile(unk, (int(missing.sum()), 1)))
        np.testing.assert_array_equal(out.features["v"][~out.masks["v"]], 0.0)

    def test_zero_rate_is_identity(self, rng):
        bundle = _bundle(rng)
        out = random_missing(bundle, MissingSpec.intra(0.0, seed=9))
        assert out.is_pristine
        for m in MODALITIES:
            np.testing.assert_array_equal(out.features[m], bundle.features[m])

    def test_same_seed_same_output(self, rng):
        bundle = _bundle(rng)
        a = random_missing(bundle, MissingSpec.intra(0.4, seed=11))
        b = random_missing(bundle, MissingSpec.intra(0.4, seed=11))
        for m in MODALITIES:
            np.testing.assert_array_equal(a.masks[m], b.masks[m])
            np.testing.assert_array_equal(a.features[m], b.features[m])

    def test_different_seeds_give_different_masks(self, rng):
        bundle = _bundle(rng, length=8)
        distinct = 0
        for trial in range(1000):
            a = random_missing(bundle, MissingSpec.intra(0.5, seed=2 * trial))
            b = random_missing(bundle, MissingSpec.intra(0.5, seed=2 * trial + 1))
            if any(not np.array_equal(a.masks[m], b.masks[m]) for m in MODALITIES):
                distinct += 1
        assert distinct >= 990

    def test_does_not_touch_input(self, rng):
        bundle = _bundle(rng)
        before = {m: bundle.features[m].copy() for m in MODALITIES}
        random_missing(bundle, MissingSpec.intra(0.9, seed=1))
        assert bundle.is_pristine
        for m in MODALITIES:
            np.testing.assert_array_equal(bundle.features[m], before[m])

    def test_inter_text_only(self, rng):
        bundle = _bundle(rng)
        out = random_missing(bundle, MissingSpec.inter({"t"}))
        assert out.masks["t"].all()
        for m in ("v", "a"):
            assert not out.masks[m].any()
            np.testing.assert_array_equal(out.features[m], 0.0)

    def test_remask_is_contract_error(self, rng):
        bundle = _bundle(rng)
        once = random_missing(bundle, MissingSpec.intra(0.5, seed=0))
        with pytest.raises(DataContractError):
            random_missing(once, MissingSpec.intra(0.5, seed=1))

    def test_uniform_random_rates_stay_in_bounds(self, rng):
        bundle = _bundle(rng)
        for seed in range(20):
            out = random_missing(bundle, MissingSpec.uniform_random(seed=seed))
            for m in MODALITIES:
                assert 0 <= int((~out.masks[m]).sum()) <= 10


class TestMissingSpecValidation:
    """Invalid corruption specs are rejected up front."""

    def test_rate_out_of_range(self):
        with pytest.raises(DataContractError):
            MissingSpec.intra(1.5)

    def test_empty_subset(self):
        with pytest.raises(DataContractError):
            MissingSpec.inter(set())

    def test_unknown_modality(self):
        with pytest.raises(DataContractError):
            MissingSpec.inter({"t", "x"})

    def test_unknown_mode(self):
        with pytest.raises(DataContractError):
            MissingSpec(mode="drop")


class TestCorruptSplit:
    """Whole-split corruption."""

    def test_rows_subset_only(self, tiny_dataset):
        split = tiny_dataset["train"]
        rows = np.array([0, 3, 5])
        out = corrupt_split(split, MissingSpec.intra(0.5, seed=4), rows=rows)
        for i in range(len(split)):
            touched = not all(bool(out.masks[m][i].all()) for m in MODALITIES)
            assert touched == (i in rows)

    def test_rejects_corrupted_split(self, tiny_dataset):
        once = corrupt_split(tiny_dataset["test"], MissingSpec.intra(0.5, seed=1))
        with pytest.raises(DataContractError):
            corrupt_split(once, MissingSpec.intra(0.5, seed=2))

    def test_substitution_vector_shape_checked(self):
        with pytest.raises(DataContractError):
            substitution_vector("t", 6, np.zeros(5))


# ---------------------------------------------------------------------------
# TestSyntheticData
# ---------------------------------------------------------------------------


class TestSyntheticData:
    """Planted-signal generator."""

    def test_split_counts_floor(self):
        assert split_counts(40) == (28, 4, 8)
        assert split_counts(512) == (358, 51, 103)

    def test_shapes_and_label_range(self, tiny_dataset):
        assert [len(tiny_dataset[s]) for s in ("train", "valid", "test")] == [28, 4, 8]
        for split in tiny_dataset.splits.values():
            for m in MODALITIES:
                assert split.features[m].shape[1:] == (TINY_LENGTHS[m], TINY_DIMS[m])
                assert split.masks[m].all()
            assert np.all(np.abs(split.labels) <= 3.0)

    def test_deterministic(self):
        a = generate_synthetic(20, TINY_LENGTHS, TINY_DIMS, seed=5)
        b = generate_synthetic(20, TINY_LENGTHS, TINY_DIMS, seed=5)
        for name in a.splits:
            for m in MODALITIES:
                np.testing.assert_array_equal(a[name].features[m], b[name].features[m])
            np.testing.assert_array_equal(a[name].labels, b[name].labels)

    def test_full_redundancy_aligns_directions(self):
        ds = generate_synthetic(10, TINY_LENGTHS, TINY_DIMS, redundancy=1.0, seed=2)
        for value in planted_cosines(ds).values():
            assert value == pytest.approx(1.0, abs=1e-9)

    def test_zero_redundancy_orthogonal_directions(self):
        ds = generate_synthetic(10, TINY_LENGTHS, TINY_DIMS, redundancy=0.0, seed=2)
        cos = planted_cosines(ds)
        # private parts are orthogonal to the shared vector, not to each other
        assert all(abs(v) < 1.0 - 1e-6 for v in cos.values())

    def test_linear_readout_recovers_label(self):
        ds = generate_synthetic(400, TINY_LENGTHS, TINY_DIMS, redundancy=0.5, seed=0)

        def pooled(split):
            cols = [split.features[m].mean(axis=1) for m in MODALITIES]
            return np.hstack(cols + [np.ones((len(split), 1))])

        coef, *_ = np.linalg.lstsq(pooled(ds["train"]), ds["train"].labels, rcond=None)
        pred = pooled(ds["test"]) @ coef
        assert np.mean(np.abs(pred - ds["test"].labels)) < 0.5

    def test_rejects_bad_arguments(self):
        with pytest.raises(DataContractError):
            generate_synthetic(0, TINY_LENGTHS, TINY_DIMS)
        with pytest.raises(DataContractError):
            generate_synthetic(10, TINY_LENGTHS, {"t": 1, "v": 5, "a": 4})
        with pytest.raises(DataContractError):
            generate_synthetic(10, TINY_LENGTHS, TINY_DIMS, redundancy=1.5)


# ---------------------------------------------------------------------------
# TestContainerFormat
# ---------------------------------------------------------------------------


class TestContainerFormat:
    """manifest.txt plus little-endian binaries."""

    def test_save_then_load_is_exact(self, tiny_dataset, tmp_path):
        manifest = save_dataset(tiny_dataset, tmp_path / "ds")
        loaded = load_dataset(manifest)
        assert loaded.dims == tiny_dataset.dims
        assert loaded.lengths == tiny_dataset.lengths
        assert loaded.meta == tiny_dataset.meta
        for name in tiny_dataset.splits:
            for m in MODALITIES:
                np.testing.assert_array_equal(loaded[name].features[m], tiny_dataset[name].features[m])
                np.testing.assert_array_equal(loaded[name].masks[m], tiny_dataset[name].masks[m])
            np.testing.assert_array_equal(loaded[name].labels, tiny_dataset[name].labels)

    def test_manifest_entries(self, tiny_dataset, tmp_path):
        save_dataset(tiny_dataset, tmp_path)
        entries = read_manifest(tmp_path)
        assert entries["format"] == "derl-dataset/1"
        assert entries["endianness"] == "little"
        assert entries["count_train"] == "28"
        assert entries["dim_t"] == "6"

    def test_wrong_width_is_format_error(self, tiny_dataset, tmp_path):
        manifest = save_dataset(tiny_dataset, tmp_path)
        text = manifest.read_text().replace("dim_t: 6", "dim_t: 17")
        manifest.write_text(text)
        with pytest.raises(DataFormatError) as exc:
            load_dataset(manifest)
        assert "train_t.bin" in str(exc.value)

    def test_missing_file_is_format_error(self, tiny_dataset, tmp_path):
        manifest = save_dataset(tiny_dataset, tmp_path)
        (tmp_path / "valid_a.bin").unlink()
        with pytest.raises(DataFormatError):
            load_dataset(manifest)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataFormatError):
            read_manifest(tmp_path / "nowhere")

    def test_malformed_line(self, tmp_path):
        (tmp_path / "manifest.txt").write_text("format derl\n")
        with pytest.raises(DataFormatError):
            read_manifest(tmp_path)
