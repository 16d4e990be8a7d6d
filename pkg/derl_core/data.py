"""Multimodal dataset container, synthetic generator, and missing-modality simulators."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from decimal import ROUND_FLOOR, ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .config import MODALITIES

logger = logging.getLogger("derl_core.data")

SPLITS: Tuple[str, str, str] = ("train", "valid", "test")
FORMAT_TAG = "derl-dataset/1"
LABEL_RANGE = 3.0
UNIFORM_RANDOM = "uniform-random"


class DataContractError(Exception):
    """A data operation was called outside its contract."""


class DataFormatError(Exception):
    """A dataset manifest and its binary files disagree."""


def _exact_product(fraction: float, n: int) -> Decimal:
    # repr gives the shortest decimal that round-trips, so 0.7 * 45 is 31.5 rather than 31.4999...
    return Decimal(repr(float(fraction))) * n


def scaled_count(fraction: float, n: int) -> int:
    """round_half_away(fraction * n) computed on the decimal value of ``fraction``, capped at n."""
    return min(n, int(_exact_product(fraction, n).quantize(Decimal(1), rounding=ROUND_HALF_UP)))


# ----------------------------- Types -----------------------------

@dataclass
class ModalityBundle:
    """One sample: per-modality feature rows, presence masks, and a label."""

    features: Dict[str, np.ndarray]
    masks: Dict[str, np.ndarray]
    label: float

    def __post_init__(self) -> None:
        for m in MODALITIES:
            x = self.features[m]
            if x.ndim != 2 or x.shape[0] < 1:
                raise DataContractError(f"modality {m}: features must be T x D with T >= 1, got {x.shape}")
            if self.masks[m].shape != (x.shape[0],):
                raise DataContractError(f"modality {m}: mask shape {self.masks[m].shape} != ({x.shape[0]},)")
            if not np.all(np.isfinite(x)):
                raise DataContractError(f"modality {m}: non-finite feature values")

    @classmethod
    def pristine(cls, features: Mapping[str, np.ndarray], label: float) -> "ModalityBundle":
        feats = {m: np.asarray(features[m], dtype=np.float64) for m in MODALITIES}
        masks = {m: np.ones(feats[m].shape[0], dtype=bool) for m in MODALITIES}
        return cls(feats, masks, float(label))

    @property
    def is_pristine(self) -> bool:
        return all(bool(self.masks[m].all()) for m in MODALITIES)


@dataclass
class MissingSpec:
    """How to corrupt inputs: per-modality token rates, or whole-modality availability."""

    mode: str
    rates: Union[Dict[str, float], str] = field(default_factory=dict)
    available: FrozenSet[str] = frozenset(MODALITIES)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("intra", "inter"):
            raise DataContractError(f"missing mode must be intra or inter, got '{self.mode}'")
        if self.mode == "intra":
            if isinstance(self.rates, str):
                if self.rates != UNIFORM_RANDOM:
                    raise DataContractError(f"unknown rate mode '{self.rates}'")
            else:
                for m in MODALITIES:
                    r = self.rates.get(m, 0.0)
                    if not 0.0 <= r <= 1.0:
                        raise DataContractError(f"rate for {m} must lie in [0, 1], got {r}")
        else:
            self.available = frozenset(self.available)
            if not self.available or not self.available <= set(MODALITIES):
                raise DataContractError(f"availability subset must be a non-empty subset of t,v,a, got {sorted(self.available)}")

    @classmethod
    def intra(cls, rate: float | Mapping[str, float], seed: int = 0) -> "MissingSpec":
        rates = dict(rate) if isinstance(rate, Mapping) else {m: float(rate) for m in MODALITIES}
        return cls(mode="intra", rates=rates, seed=seed)

    @classmethod
    def uniform_random(cls, seed: int = 0) -> "MissingSpec":
        return cls(mode="intra", rates=UNIFORM_RANDOM, seed=seed)

    @classmethod
    def inter(cls, available: Iterable[str], seed: int = 0) -> "MissingSpec":
        return cls(mode="inter", available=frozenset(available), seed=seed)


@dataclass
class Split:
    """Column store for one split: arrays of shape (n, T_m, D_m), masks (n, T_m), labels (n,)."""

    features: Dict[str, np.ndarray]
    masks: Dict[str, np.ndarray]
    labels: np.ndarray

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @classmethod
    def from_bundles(cls, bundles: Sequence[ModalityBundle]) -> "Split":
        return cls(
            features={m: np.stack([b.features[m] for b in bundles]) for m in MODALITIES},
            masks={m: np.stack([b.masks[m] for b in bundles]) for m in MODALITIES},
            labels=np.array([b.label for b in bundles], dtype=np.float64),
        )

    def bundle(self, i: int) -> ModalityBundle:
        return ModalityBundle(
            features={m: self.features[m][i].copy() for m in MODALITIES},
            masks={m: self.masks[m][i].copy() for m in MODALITIES},
            label=float(self.labels[i]),
        )

    def bundles(self) -> Iterator[ModalityBundle]:
        for i in range(len(self)):
            yield self.bundle(i)

    def take(self, indices: Sequence[int] | np.ndarray) -> "Split":
        idx = np.asarray(indices, dtype=np.int64)
        return Split(
            features={m: self.features[m][idx] for m in MODALITIES},
            masks={m: self.masks[m][idx] for m in MODALITIES},
            labels=self.labels[idx],
        )

    def batches(self, batch_size: int, order: Optional[np.ndarray] = None) -> Iterator["Split"]:
        order = np.arange(len(self)) if order is None else order
        for start in range(0, len(self), batch_size):
            yield self.take(order[start:start + batch_size])

    def copy(self) -> "Split":
        return Split(
            features={m: v.copy() for m, v in self.features.items()},
            masks={m: v.copy() for m, v in self.masks.items()},
            labels=self.labels.copy(),
        )


@dataclass
class Dataset:
    splits: Dict[str, Split]
    dims: Dict[str, int]
    lengths: Dict[str, int]
    provenance: str = "synthetic"
    meta: Dict[str, str] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Split:
        return self.splits[name]

    def validate(self) -> None:
        for name, split in self.splits.items():
            for m in MODALITIES:
                shape = split.features[m].shape
                if shape[1:] != (self.lengths[m], self.dims[m]):
                    raise DataContractError(
                        f"split {name} modality {m}: shape {shape[1:]} != ({self.lengths[m]}, {self.dims[m]})"
                    )
            if np.any(np.abs(split.labels) > LABEL_RANGE):
                raise DataContractError(f"split {name}: labels outside [-3, 3]")


# ----------------------------- Corruption -----------------------------

def substitution_vector(modality: str, dim: int, text_vector: Optional[np.ndarray] = None) -> np.ndarray:
    """Row written over a missing token: the configured unknown vector for text, zeros otherwise."""
    if modality == "t" and text_vector is not None:
        vec = np.asarray(text_vector, dtype=np.float64)
        if vec.shape != (dim,):
            raise DataContractError(f"text substitution vector must have shape ({dim},), got {vec.shape}")
        return vec
    return np.zeros(dim)


def masked_count(rate: float, length: int) -> int:
    return scaled_count(rate, length)


def _rates_for(spec: MissingSpec, rng: np.random.Generator) -> Dict[str, float]:
    if spec.rates == UNIFORM_RANDOM:
        return {m: float(rng.uniform(0.0, 1.0)) for m in MODALITIES}
    return {m: float(spec.rates.get(m, 0.0)) for m in MODALITIES}


def _corrupt_rows(
    features: Dict[str, np.ndarray],
    masks: Dict[str, np.ndarray],
    spec: MissingSpec,
    rng: np.random.Generator,
    text_vector: Optional[np.ndarray],
) -> None:
    if spec.mode == "inter":
        for m in MODALITIES:
            if m not in spec.available:
                features[m][:] = substitution_vector(m, features[m].shape[1], text_vector)
                masks[m][:] = False
        return
    rates = _rates_for(spec, rng)
    for m in MODALITIES:
        length = features[m].shape[0]
        n = masked_count(rates[m], length)
        if n == 0:
            continue
        positions = rng.choice(length, size=n, replace=False)
        features[m][positions] = substitution_vector(m, features[m].shape[1], text_vector)
        masks[m][positions] = False


def random_missing(
    bundle: ModalityBundle,
    spec: MissingSpec,
    text_vector: Optional[np.ndarray] = None,
) -> ModalityBundle:
    """Return a corrupted copy of a pristine bundle; deterministic given ``spec.seed``."""
    if not bundle.is_pristine:
        raise DataContractError("random_missing needs a pristine bundle; re-masking would compound corruption")
    rng = np.random.default_rng(spec.seed)
    features = {m: bundle.features[m].copy() for m in MODALITIES}
    masks = {m: bundle.masks[m].copy() for m in MODALITIES}
    _corrupt_rows(features, masks, spec, rng, text_vector)
    return ModalityBundle(features, masks, bundle.label)


def corrupt_split(
    split: Split,
    spec: MissingSpec,
    rows: Optional[np.ndarray] = None,
    text_vector: Optional[np.ndarray] = None,
) -> Split:
    """Corrupt a whole split (or only ``rows``) with one generator seeded by ``spec.seed``."""
    if not all(bool(split.masks[m].all()) for m in MODALITIES):
        raise DataContractError("corrupt_split needs a pristine split; re-masking would compound corruption")
    out = split.copy()
    rng = np.random.default_rng(spec.seed)
    targets = range(len(split)) if rows is None else rows
    for i in targets:
        features = {m: out.features[m][i] for m in MODALITIES}
        masks = {m: out.masks[m][i] for m in MODALITIES}
        _corrupt_rows(features, masks, spec, rng, text_vector)
    return out


# ----------------------------- Synthetic data -----------------------------

def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def planted_directions(
    dims: Mapping[str, int],
    redundancy: float,
    rng: np.random.Generator,
) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    """Signal directions in a K-dim planted space and per-modality embeddings into D_m.

    Each direction mixes a shared unit vector (weight sqrt(rho)) with a
    modality-private unit vector orthogonal to it (weight sqrt(1 - rho)).
    """
    k = min(dims[m] for m in MODALITIES)
    shared = _unit(rng.standard_normal(k))
    directions: Dict[str, np.ndarray] = {}
    embeddings: Dict[str, np.ndarray] = {}
    for m in MODALITIES:
        private = rng.standard_normal(k)
        private = _unit(private - private.dot(shared) * shared)
        directions[m] = _unit(math.sqrt(redundancy) * shared + math.sqrt(1.0 - redundancy) * private)
        q, _ = np.linalg.qr(rng.standard_normal((dims[m], k)))
        embeddings[m] = q[:, :k]
    return directions, embeddings


def split_counts(n: int, fractions: Sequence[float] = (0.7, 0.1, 0.2)) -> Tuple[int, int, int]:
    train = int(_exact_product(fractions[0], n).to_integral_value(rounding=ROUND_FLOOR))
    valid = int(_exact_product(fractions[1], n).to_integral_value(rounding=ROUND_FLOOR))
    return train, valid, n - train - valid


def generate_synthetic(
    n: int,
    lengths: Mapping[str, int],
    dims: Mapping[str, int],
    redundancy: float = 0.5,
    seed: int = 0,
    noise: float = 0.3,
    fractions: Sequence[float] = (0.7, 0.1, 0.2),
) -> Dataset:
    """Plant a latent score y ~ U[-3, 3] into every modality's tokens plus Gaussian noise."""
    if n < 1:
        raise DataContractError(f"need at least one sample, got n={n}")
    if any(dims[m] < 2 for m in MODALITIES):
        raise DataContractError(f"every modality dim must be >= 2, got {dict(dims)}")
    if any(lengths[m] < 1 for m in MODALITIES):
        raise DataContractError(f"every sequence length must be >= 1, got {dict(lengths)}")
    if not 0.0 <= redundancy <= 1.0:
        raise DataContractError(f"redundancy must lie in [0, 1], got {redundancy}")

    rng = np.random.default_rng(seed)
    directions, embeddings = planted_directions(dims, redundancy, rng)
    y = rng.uniform(-LABEL_RANGE, LABEL_RANGE, size=n)
    features: Dict[str, np.ndarray] = {}
    for m in MODALITIES:
        signal = embeddings[m] @ directions[m]
        signal = signal / np.linalg.norm(signal) * math.sqrt(dims[m])
        clean = y[:, None, None] * signal[None, None, :] / LABEL_RANGE
        features[m] = clean + noise * rng.standard_normal((n, lengths[m], dims[m]))

    n_train, n_valid, _ = split_counts(n, fractions)
    bounds = {"train": (0, n_train), "valid": (n_train, n_train + n_valid), "test": (n_train + n_valid, n)}
    splits = {}
    for name, (lo, hi) in bounds.items():
        splits[name] = Split(
            features={m: features[m][lo:hi].copy() for m in MODALITIES},
            masks={m: np.ones((hi - lo, lengths[m]), dtype=bool) for m in MODALITIES},
            labels=y[lo:hi].copy(),
        )
    meta = {"seed": str(seed), "redundancy": repr(float(redundancy)), "noise": repr(float(noise))}
    for m in MODALITIES:
        meta[f"planted_{m}"] = ",".join(repr(float(v)) for v in directions[m])
    logger.info("Generated synthetic dataset n=%d rho=%.2f seed=%d", n, redundancy, seed)
    return Dataset(splits, dict(dims), dict(lengths), "synthetic", meta)


def planted_cosines(dataset: Dataset) -> Dict[str, float]:
    """Pairwise cosine of the planted signal directions recorded in a synthetic dataset."""
    vecs = {}
    for m in MODALITIES:
        raw = dataset.meta.get(f"planted_{m}")
        if raw is None:
            raise DataContractError("dataset carries no planted directions (not synthetic?)")
        vecs[m] = np.array([float(v) for v in raw.split(",")])
    out = {}
    for i, a in enumerate(MODALITIES):
        for b in MODALITIES[i + 1:]:
            out[f"{a}{b}"] = float(vecs[a].dot(vecs[b]) / (np.linalg.norm(vecs[a]) * np.linalg.norm(vecs[b])))
    return out


# ----------------------------- Container format -----------------------------

def _write_array(path: Path, array: np.ndarray, dtype: str) -> None:
    path.write_bytes(np.ascontiguousarray(array, dtype=dtype).tobytes())


def save_dataset(dataset: Dataset, directory: Path | str) -> Path:
    """Write manifest.txt plus one little-endian float64 file per (split, modality)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [
        f"format: {FORMAT_TAG}",
        f"provenance: {dataset.provenance}",
        "endianness: little",
        f"modalities: {','.join(MODALITIES)}",
        f"splits: {','.join(dataset.splits)}",
    ]
    for m in MODALITIES:
        lines.append(f"dim_{m}: {dataset.dims[m]}")
        lines.append(f"len_{m}: {dataset.lengths[m]}")
    for name, split in dataset.splits.items():
        lines.append(f"count_{name}: {len(split)}")
        for m in MODALITIES:
            fname = f"{name}_{m}.bin"
            _write_array(directory / fname, split.features[m], "<f8")
            lines.append(f"file_{name}_{m}: {fname}")
            mname = f"{name}_{m}_mask.bin"
            _write_array(directory / mname, split.masks[m], "u1")
            lines.append(f"mask_{name}_{m}: {mname}")
        lname = f"{name}_labels.bin"
        _write_array(directory / lname, split.labels, "<f8")
        lines.append(f"labels_{name}: {lname}")
    for key in sorted(dataset.meta):
        lines.append(f"meta_{key}: {dataset.meta[key]}")
    manifest = directory / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def read_manifest(path: Path | str) -> Dict[str, str]:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.txt"
    if not path.exists():
        raise DataFormatError(f"manifest not found: {path}")
    entries: Dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise DataFormatError(f"{path}:{lineno}: expected 'key: value', got '{line}'")
        key, value = line.split(":", 1)
        entries[key.strip()] = value.strip()
    return entries


def _read_array(path: Path, shape: Tuple[int, ...], dtype: str) -> np.ndarray:
    if not path.exists():
        raise DataFormatError(f"missing data file {path} (expected shape {shape})")
    raw = path.read_bytes()
    itemsize = np.dtype(dtype).itemsize
    expected = int(np.prod(shape)) * itemsize
    if len(raw) != expected:
        raise DataFormatError(
            f"{path.name}: {len(raw)} bytes does not match expected shape {shape} ({expected} bytes)"
        )
    return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def load_dataset(manifest_path: Path | str) -> Dataset:
    manifest_path = Path(manifest_path)
    directory = manifest_path if manifest_path.is_dir() else manifest_path.parent
    entries = read_manifest(manifest_path)
    if entries.get("endianness", "little") != "little":
        raise DataFormatError(f"unsupported endianness '{entries['endianness']}' in {manifest_path}")
    try:
        dims = {m: int(entries[f"dim_{m}"]) for m in MODALITIES}
        lengths = {m: int(entries[f"len_{m}"]) for m in MODALITIES}
        split_names = [s.strip() for s in entries.get("splits", ",".join(SPLITS)).split(",") if s.strip()]
        splits: Dict[str, Split] = {}
        for name in split_names:
            count = int(entries[f"count_{name}"])
            features, masks = {}, {}
            for m in MODALITIES:
                shape = (count, lengths[m], dims[m])
                features[m] = _read_array(directory / entries[f"file_{name}_{m}"], shape, "<f8").astype(np.float64)
                mask_file = entries.get(f"mask_{name}_{m}")
                if mask_file:
                    masks[m] = _read_array(directory / mask_file, shape[:2], "u1").astype(bool)
                else:
                    masks[m] = np.ones(shape[:2], dtype=bool)
            labels = _read_array(directory / entries[f"labels_{name}"], (count,), "<f8").astype(np.float64)
            splits[name] = Split(features, masks, labels)
    except KeyError as exc:
        raise DataFormatError(f"{manifest_path}: manifest is missing key {exc}") from None
    except ValueError as exc:
        raise DataFormatError(f"{manifest_path}: {exc}") from None
    meta = {k[len("meta_"):]: v for k, v in entries.items() if k.startswith("meta_")}
    dataset = Dataset(splits, dims, lengths, entries.get("provenance", "external"), meta)
    dataset.validate()
    return dataset
