"""Run configuration: dataclass settings, presets, INI loading, overrides."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple

logger = logging.getLogger("derl_core.config")

MODALITIES: Tuple[str, str, str] = ("t", "v", "a")


class ConfigError(Exception):
    """Invalid configuration: unknown key, bad value, or bad preset."""


@dataclass
class ModelConfig:
    """Architecture settings; hashed into every saved model."""

    dim_t: int = 16
    dim_v: int = 12
    dim_a: int = 8
    len_t: int = 8
    len_v: int = 8
    len_a: int = 8
    d_model: int = 16
    bottleneck: int = 2
    heads: int = 1
    unified_depth: int = 1
    fusion_depth: int = 1
    k_private: int = 1
    k_shared: int = 3
    expert_hidden: int = 0
    recon_hidden: int = 0
    head_hidden: int = 0
    cosine_mode: str = "abs"
    detach_targets: bool = True
    learned_unk: bool = False
    use_hed: bool = True
    use_mrf: bool = True
    recon_levels: Tuple[int, ...] = (1, 2, 3)

    def input_dim(self, modality: str) -> int:
        return getattr(self, f"dim_{modality}")

    def max_len(self, modality: str) -> int:
        return getattr(self, f"len_{modality}")

    @property
    def expert_width(self) -> int:
        return self.expert_hidden or self.d_model

    @property
    def recon_width(self) -> int:
        return self.recon_hidden or self.d_model

    @property
    def head_width(self) -> int:
        return self.head_hidden or self.d_model


@dataclass
class DataConfig:
    path: str = ""
    samples: int = 512
    redundancy: float = 0.5
    noise: float = 0.3
    seed: int = 7
    split: Tuple[float, ...] = (0.7, 0.1, 0.2)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 0.01
    batch_size: int = 64
    epochs: int = 200
    augment_fraction: float = 0.5
    select_rate: float = 0.5
    loss_weights: Tuple[float, ...] = (1.0, 1.0, 1.0)
    seed: int = 0
    progress: bool = False


@dataclass
class EvalConfig:
    rates: Tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    seed: int = 1234
    batch_size: int = 256
    confusion_rates: Tuple[float, ...] = (0.1, 0.5, 0.9)
    variants: Tuple[str, ...] = ("full", "wo_hed", "wo_mlcr", "rec1", "rec2", "rec3", "wo_mrf")


@dataclass
class SweepConfig:
    expert_grid: Tuple[int, ...] = (1, 2, 3, 4, 5)
    rates: Tuple[float, ...] = (0.1, 0.3, 0.5, 0.7, 0.9)
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4, 5, 6, 7, 8, 9)


SECTIONS = {
    "data": DataConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
    "sweep": SweepConfig,
}


@dataclass
class RunConfig:
    preset: str = "toy"
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def copy(self) -> "RunConfig":
        return dataclasses.replace(
            self,
            data=dataclasses.replace(self.data),
            model=dataclasses.replace(self.model),
            train=dataclasses.replace(self.train),
            eval=dataclasses.replace(self.eval),
            sweep=dataclasses.replace(self.sweep),
        )

    def to_ini(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser["run"] = {"preset": self.preset}
        for section in SECTIONS:
            obj = getattr(self, section)
            parser[section] = {f.name: _format(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def write_snapshot(self, out_dir: Path) -> Path:
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "resolved_config.ini"
        path.write_text(self.to_ini(), encoding="utf-8")
        return path


# ----------------------------- Presets -----------------------------

PRESETS: Dict[str, Dict[str, Dict[str, Any]]] = {
    "toy": {
        "model": {"d_model": 16, "bottleneck": 2, "k_private": 1, "k_shared": 3},
        "train": {"lr": 1e-3, "epochs": 30, "batch_size": 64},
        "data": {"samples": 512},
    },
    "mosi": {
        "model": {
            "dim_t": 768, "dim_v": 20, "dim_a": 5,
            "len_t": 50, "len_v": 50, "len_a": 50,
            "d_model": 128, "bottleneck": 4, "k_private": 1, "k_shared": 3,
            "unified_depth": 1, "fusion_depth": 2,
        },
        "train": {"lr": 1e-4, "epochs": 200, "batch_size": 64},
    },
    "mosei": {
        "model": {
            "dim_t": 768, "dim_v": 35, "dim_a": 74,
            "len_t": 50, "len_v": 50, "len_a": 50,
            "d_model": 128, "bottleneck": 8, "k_private": 3, "k_shared": 3,
            "unified_depth": 1, "fusion_depth": 2,
        },
        "train": {"lr": 1e-4, "epochs": 200, "batch_size": 64},
    },
}


def preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}' (available: {', '.join(sorted(PRESETS))})")
    config = RunConfig(preset=name)
    for section, values in PRESETS[name].items():
        for key, value in values.items():
            setattr(getattr(config, section), key, value)
    return config


# ----------------------------- Ablations -----------------------------

ABLATIONS: Dict[str, Dict[str, Any]] = {
    "full": {},
    "wo_hed": {"use_hed": False},
    "wo_mlcr": {"recon_levels": ()},
    "rec1": {"recon_levels": (1,)},
    "rec2": {"recon_levels": (2,)},
    "rec3": {"recon_levels": (3,)},
    "wo_mrf": {"use_mrf": False},
}


def ablation_variant(config: RunConfig, name: str) -> RunConfig:
    """Copy of ``config`` with the module switches of one ablation variant applied."""
    if name not in ABLATIONS:
        raise ConfigError(f"unknown ablation variant '{name}' (available: {', '.join(ABLATIONS)})")
    variant = config.copy()
    for key, value in ABLATIONS[name].items():
        setattr(variant.model, key, value)
    return variant


# ----------------------------- Parsing -----------------------------

def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(raw: str, default: Any, where: str) -> Any:
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered in {"true", "yes", "1", "on"}:
                return True
            if lowered in {"false", "no", "0", "off"}:
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if not raw:
                return ()
            kind = type(default[0]) if default else str
            items = [part.strip() for part in raw.split(",") if part.strip()]
            if kind is str:
                return tuple(items)
            return tuple(kind(item) for item in items)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse '{raw}' as {type(default).__name__}") from None


def apply_setting(config: RunConfig, section: str, key: str, raw: str) -> None:
    if section not in SECTIONS:
        raise ConfigError(f"unknown config section '{section}'")
    obj = getattr(config, section)
    declared = {f.name: f.default for f in dataclasses.fields(obj)}
    if key not in declared:
        raise ConfigError(f"unknown config key '{section}.{key}'")
    setattr(obj, key, _parse(raw, declared[key], f"{section}.{key}"))


def parse_override(text: str) -> Tuple[str, str, str]:
    """Split ``section.key=value``."""
    if "=" not in text:
        raise ConfigError(f"override '{text}' must look like section.key=value")
    lhs, value = text.split("=", 1)
    if "." not in lhs:
        raise ConfigError(f"override '{text}' must name a section: section.key=value")
    section, key = lhs.strip().split(".", 1)
    return section, key.strip(), value


def load_run_config(
    path: Optional[Path | str] = None,
    overrides: Iterable[str] = (),
    text: Optional[str] = None,
) -> RunConfig:
    """Resolve a RunConfig: preset defaults, then INI values, then overrides."""
    parser = configparser.ConfigParser(interpolation=None)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        parser.read_string(path.read_text(encoding="utf-8"), source=str(path))
    elif text:
        parser.read_string(text)

    unknown = [s for s in parser.sections() if s not in SECTIONS and s != "run"]
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    if parser.has_section("run"):
        extra = [k for k in parser["run"] if k != "preset"]
        if extra:
            raise ConfigError(f"unknown config key(s) in [run]: {', '.join(extra)}")

    parsed_overrides = [parse_override(o) for o in overrides]
    preset_name = parser.get("run", "preset", fallback="toy")
    for section, key, value in parsed_overrides:
        if section == "run" and key == "preset":
            preset_name = value.strip()
        elif section == "run":
            raise ConfigError(f"unknown config key 'run.{key}'")

    config = preset(preset_name)
    for section in parser.sections():
        if section == "run":
            continue
        for key, value in parser[section].items():
            apply_setting(config, section, key, value)
    for section, key, value in parsed_overrides:
        if section != "run":
            apply_setting(config, section, key, value)
    validate(config)
    return config


def validate(config: RunConfig) -> None:
    m, t = config.model, config.train
    if m.cosine_mode not in {"abs", "raw"}:
        raise ConfigError(f"model.cosine_mode must be abs or raw, got '{m.cosine_mode}'")
    if any(level not in (1, 2, 3) for level in m.recon_levels):
        raise ConfigError(f"model.recon_levels must be drawn from 1,2,3, got {m.recon_levels}")
    for name in ("d_model", "bottleneck", "heads", "unified_depth", "fusion_depth", "k_private", "k_shared"):
        if getattr(m, name) < 1:
            raise ConfigError(f"model.{name} must be >= 1")
    if m.d_model % m.heads:
        raise ConfigError(f"model.d_model ({m.d_model}) must be divisible by model.heads ({m.heads})")
    if not (t.lr > 0 and t.batch_size > 0 and t.epochs > 0):
        raise ConfigError("train.lr, train.batch_size and train.epochs must be positive")
    for name in ("augment_fraction", "select_rate"):
        if not 0.0 <= getattr(t, name) <= 1.0:
            raise ConfigError(f"train.{name} must lie in [0, 1]")
    if len(t.loss_weights) != 3:
        raise ConfigError("train.loss_weights needs exactly three values (task, dec, rec)")
    if not 0.0 <= config.data.redundancy <= 1.0:
        raise ConfigError("data.redundancy must lie in [0, 1]")
    if any(not 0.0 <= r <= 1.0 for r in config.eval.rates):
        raise ConfigError("eval.rates must lie in [0, 1]")
    unknown = [v for v in config.eval.variants if v not in ABLATIONS]
    if unknown:
        raise ConfigError(f"eval.variants has unknown variant(s): {', '.join(unknown)}")
    if any(k < 1 for k in config.sweep.expert_grid):
        raise ConfigError("sweep.expert_grid values must be >= 1")


# ----------------------------- Hashing -----------------------------

def model_config_dict(model: ModelConfig) -> Dict[str, Any]:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(model).items()}


def model_config_from_dict(values: Mapping[str, Any]) -> ModelConfig:
    names = {f.name for f in dataclasses.fields(ModelConfig)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"unknown model config key(s): {', '.join(unknown)}")
    kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in values.items()}
    return ModelConfig(**kwargs)


def config_hash(model: ModelConfig) -> str:
    canonical = json.dumps(model_config_dict(model), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
