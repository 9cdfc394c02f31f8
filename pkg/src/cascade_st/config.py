"""Experiment configuration: a versioned, human-editable JSON schema."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

__all__ = [
    "ConfigError",
    "SCHEMA_VERSION",
    "GRANULARITY_ALPHA",
    "DataPaths",
    "OptimizerSettings",
    "DecodeSettings",
    "ExperimentConfig",
    "load_config",
    "save_config",
    "resolve_mt_alpha",
]

SCHEMA_VERSION = 1

# default translation-side length penalty by (recognition target granularity,
# translation target granularity); selected when mt_alpha is "auto"
GRANULARITY_ALPHA = {
    ("char", "bpe"): 0.3,
    ("bpe", "bpe"): 1.0,
}


class ConfigError(ValueError):
    """Raised for structurally invalid or unresolvable configurations."""


@dataclass
class DataPaths:
    train_manifest: str = "data/train.tsv"
    dev_manifest: str = "data/dev.tsv"
    test_manifest: str = "data/test.tsv"
    source_vocab: str = "vocab/source.vocab"
    target_vocab: str = "vocab/target.vocab"


@dataclass
class OptimizerSettings:
    scale: float = 2.0
    warmup: int = 300
    batch_size: int = 32
    steps: int = 2200
    checkpoint_every: int = 200
    average_count: int = 3
    seed: int = 0

    def __post_init__(self):
        for name in ("warmup", "batch_size", "steps", "checkpoint_every", "average_count"):
            if getattr(self, name) < 1:
                raise ConfigError(f"optimizer.{name} must be >= 1")


@dataclass
class DecodeSettings:
    asr_beam: int = 10
    mt_beam: int = 5
    asr_alpha: float = 0.0
    mt_alpha: float | str = "auto"
    asr_max_len: int = 40
    mt_max_len: int = 40
    combine_normalized: bool = False

    def __post_init__(self):
        if self.asr_beam < 1 or self.mt_beam < 1:
            raise ConfigError("beam sizes must be >= 1")
        if self.asr_max_len < 1 or self.mt_max_len < 1:
            raise ConfigError("max decode lengths must be >= 1")
        if isinstance(self.mt_alpha, str) and self.mt_alpha != "auto":
            raise ConfigError('mt_alpha must be a number or "auto"')


_MODEL_KEYS = {
    "encoder_layers", "decoder_layers", "d_model", "d_ff", "heads",
    "dropout", "label_smoothing", "max_len",
}

_DESK_MODEL = {
    "encoder_layers": 2, "decoder_layers": 2, "d_model": 64, "d_ff": 128,
    "heads": 4, "dropout": 0.1, "label_smoothing": 0.1, "max_len": 512,
}


def _check_model_section(name: str, section: dict) -> dict:
    unknown = set(section) - _MODEL_KEYS
    if unknown:
        raise ConfigError(f"{name}: unknown model keys {sorted(unknown)}")
    return {**_DESK_MODEL, **section}


@dataclass
class ExperimentConfig:
    """Run layout, model shapes, objective weight, and decoding knobs.

    The model sections hold only architecture shapes; vocabulary sizes and
    feature dimensionality are filled in from the built artifacts when a
    model is instantiated.
    """

    run_dir: str = "runs/exp"
    data: DataPaths = field(default_factory=DataPaths)
    asr: dict = field(default_factory=dict)
    mt: dict = field(default_factory=dict)
    lam: float = 0.5
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    decoding: DecodeSettings = field(default_factory=DecodeSettings)

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("lam must be >= 0")
        self.asr = _check_model_section("asr", self.asr)
        self.mt = _check_model_section("mt", self.mt)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "run_dir": self.run_dir,
            "data": dataclasses.asdict(self.data),
            "asr": dict(self.asr),
            "mt": dict(self.mt),
            "lam": self.lam,
            "optimizer": dataclasses.asdict(self.optimizer),
            "decoding": dataclasses.asdict(self.decoding),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        version = d.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ConfigError(
                f"schema_version {version!r} unsupported (expected {SCHEMA_VERSION})")
        known = {"run_dir", "data", "asr", "mt", "lam", "optimizer", "decoding"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        kwargs: dict = {}
        if "run_dir" in d:
            kwargs["run_dir"] = d["run_dir"]
        if "data" in d:
            kwargs["data"] = DataPaths(**d["data"])
        for key in ("asr", "mt", "lam"):
            if key in d:
                kwargs[key] = d[key]
        if "optimizer" in d:
            kwargs["optimizer"] = OptimizerSettings(**d["optimizer"])
        if "decoding" in d:
            kwargs["decoding"] = DecodeSettings(**d["decoding"])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    # -- path resolution ----------------------------------------------------

    def resolve(self, name: str, base: Path) -> Path:
        """Config-relative path: absolute entries pass through unchanged."""
        raw = Path(getattr(self.data, name))
        return raw if raw.is_absolute() else base / raw

    def run_path(self, base: Path) -> Path:
        raw = Path(self.run_dir)
        return raw if raw.is_absolute() else base / raw


def resolve_mt_alpha(config: ExperimentConfig, asr_granularity: str,
                     mt_granularity: str) -> float:
    """The translation length penalty, honoring the per-granularity table."""
    alpha = config.decoding.mt_alpha
    if alpha == "auto":
        try:
            return GRANULARITY_ALPHA[(asr_granularity, mt_granularity)]
        except KeyError:
            raise ConfigError(
                f"no default length penalty for granularity pair "
                f"({asr_granularity}, {mt_granularity}); set decoding.mt_alpha")
    return float(alpha)


def load_config(path, check_paths: bool = False) -> ExperimentConfig:
    """Parse a config file; optionally require its data files to exist."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    config = ExperimentConfig.from_dict(raw)
    if check_paths:
        base = path.parent
        missing = [
            f"{name}: {config.resolve(name, base)}"
            for name in ("train_manifest", "dev_manifest", "test_manifest",
                         "source_vocab", "target_vocab")
            if not config.resolve(name, base).exists()
        ]
        if missing:
            raise ConfigError(f"{path}: missing data files — " + "; ".join(missing))
    return config


def save_config(config: ExperimentConfig, path) -> None:
    """Canonical serialization: sorted keys, two-space indent."""
    Path(path).write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
