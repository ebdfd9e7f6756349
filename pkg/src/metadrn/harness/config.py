"""Run configuration: flat ``key = value`` files with dotted section keys."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path

from ..meta import ALGORITHMS, InnerLoopConfig
from ..model import ModelSpec
from ..optim import LinearSchedule, PlateauSchedule


class ConfigError(ValueError):
    pass


def _key(name: str, default, doc: str = ""):
    return field(default=default, metadata={"key": name, "doc": doc})


SECOND_ORDER_DEFAULTS = dict(meta_batch=5, inner_steps=1, outer_beta=1e-3, outer_schedule="plateau")
REPTILE_DEFAULTS = dict(meta_batch=8, inner_steps=5, outer_beta=3e-2, outer_schedule="linear")


@dataclass
class RunConfig:
    algorithm: str = _key("algorithm", "maml")
    seed: int = _key("seed", 0)
    epochs: int = _key("epochs", 200)
    meta_batch: int | None = _key("meta_batch", None)
    output_dir: str = _key("output_dir", "runs/default")

    data_source: str = _key("data.source", "synthetic", "synthetic | folder")
    data_path: str = _key("data.path", "")
    data_manifest: str = _key("data.manifest", "")
    data_split_seed: int = _key("data.split_seed", 0)
    synth_classes: int = _key("data.synth_classes", 36)
    synth_samples: int = _key("data.synth_samples", 10)
    synth_seed: int = _key("data.synth_seed", 7)
    synth_split: str = _key("data.synth_split", "24,4,8")
    image_size: int = _key("data.image_size", 32)
    queries: int = _key("data.queries", 5)
    test_queries: int = _key("data.test_queries", 9)
    augment: bool = _key("data.augment", True)

    width_multiplier: Fraction = _key("model.width_multiplier", Fraction(1, 8))
    num_classes: int = _key("model.num_classes", 2)
    leaky_slope: float = _key("model.leaky_slope", 0.01)

    inner_alpha: float = _key("inner.alpha", 1e-3)
    inner_steps: int | None = _key("inner.steps", None)
    inner_eval_steps: int | None = _key("inner.eval_steps", None)
    metasgd_alpha_init: float = _key("metasgd.alpha_init", 1e-3)
    metasgd_clamp_alpha: bool = _key("metasgd.clamp_alpha", False, "keep learned rates >= 0")

    outer_beta: float | None = _key("outer.beta", None)
    outer_beta1: float = _key("outer.beta1", 0.9)
    outer_beta2: float = _key("outer.beta2", 0.999)
    outer_eps: float = _key("outer.eps", 1e-8)
    outer_weight_decay: float = _key("outer.weight_decay", 0.01)
    outer_schedule: str | None = _key("outer.schedule", None, "plateau | linear")
    plateau_factor: float = _key("outer.plateau_factor", 0.5)
    plateau_patience: int = _key("outer.plateau_patience", 8)
    plateau_threshold: float = _key("outer.plateau_threshold", 1e-4)
    linear_end: float = _key("outer.linear_end", 3e-5)
    linear_epochs: int = _key("outer.linear_epochs", 0, "0 means the run length")

    val_episodes: int = _key("val.episodes", 0, "0 means one per validation class")
    checkpoint_every: int = _key("checkpoint.every", 1)
    wall_clock: bool = _key("log.wall_clock", True)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        defaults = REPTILE_DEFAULTS if self.algorithm == "reptile" else SECOND_ORDER_DEFAULTS
        for name, value in defaults.items():
            if getattr(self, name) is None:
                setattr(self, name, value)
        if self.inner_eval_steps is None:
            self.inner_eval_steps = self.inner_steps
        if self.outer_schedule not in ("plateau", "linear"):
            raise ConfigError(f"outer.schedule must be plateau or linear, got {self.outer_schedule!r}")
        if self.data_source not in ("synthetic", "folder"):
            raise ConfigError(f"data.source must be synthetic or folder, got {self.data_source!r}")
        if self.data_source == "folder" and not self.data_path:
            raise ConfigError("data.path is required for data.source = folder")
        if self.image_size % 4:
            raise ConfigError("data.image_size must be divisible by 4")
        if self.meta_batch < 1 or self.epochs < 1 or self.checkpoint_every < 1:
            raise ConfigError("meta_batch, epochs and checkpoint.every must be >= 1")
        if self.inner_steps < 1:
            raise ConfigError("inner.steps must be >= 1")
        if not 0 < self.width_multiplier <= 1:
            raise ConfigError("model.width_multiplier must lie in (0, 1]")
        try:
            self.split_counts()
        except ValueError as exc:
            raise ConfigError(f"data.synth_split: {exc}") from None

    # -- derived objects ---------------------------------------------------
    def split_counts(self) -> tuple[int, int, int]:
        parts = tuple(int(p) for p in self.synth_split.split(","))
        if len(parts) != 3 or sum(parts) != self.synth_classes:
            raise ValueError(f"expected train,val,test counts summing to {self.synth_classes}")
        return parts

    def model_spec(self) -> ModelSpec:
        return ModelSpec(width_multiplier=self.width_multiplier, num_classes=self.num_classes,
                         leaky_slope=self.leaky_slope)

    def inner(self) -> InnerLoopConfig:
        return InnerLoopConfig(self.inner_alpha, self.inner_steps, self.inner_eval_steps)

    def schedule(self) -> PlateauSchedule | LinearSchedule:
        if self.outer_schedule == "plateau":
            return PlateauSchedule(self.outer_beta, self.plateau_factor, self.plateau_patience,
                                   self.plateau_threshold)
        return LinearSchedule(self.outer_beta, self.linear_end, self.linear_epochs or self.epochs)

    # -- serialization -----------------------------------------------------
    def to_text(self, include_output: bool = True) -> str:
        lines = []
        for f in fields(self):
            key = f.metadata["key"]
            if key == "output_dir" and not include_output:
                continue
            lines.append(f"{key} = {_fmt(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def hash(self) -> bytes:
        return hashlib.sha256(self.to_text(include_output=False).encode()).digest()

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


_FIELDS = {f.metadata["key"]: f for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    f = _FIELDS[key]
    kind = str(f.type)
    raw = raw.strip()
    try:
        if "bool" in kind:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if "Fraction" in kind:
            return Fraction(raw)
        if "int" in kind:
            return int(raw)
        if "float" in kind:
            return float(raw)
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"invalid value for {key}: {raw!r}") from None
    return raw


def parse_config(text: str, source: str = "<config>", overrides: dict[str, str] | None = None) -> RunConfig:
    values: dict[str, object] = {}
    items: list[tuple[str, str, str]] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        k, v = (s.strip() for s in stripped.split("=", 1))
        items.append((k, v, f"{source}:{lineno}"))
    for k, v in (overrides or {}).items():
        items.append((k, v, "override"))
    for k, v, where in items:
        if k not in _FIELDS:
            raise ConfigError(f"{where}: unknown key {k!r}")
        values[_FIELDS[k].name] = None if v in ("", "none", "None") and _FIELDS[k].default is None else _convert(k, v)
    return RunConfig(**values)


def load_config(path, overrides: dict[str, str] | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path), overrides)
