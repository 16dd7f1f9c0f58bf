"""Run configuration: a plain key=value file with command-line overrides.

Unknown keys are hard errors; a silent typo in a hyperparameter name would
destroy reproducibility. Triples are comma-separated ("2,2,2"), encoder
widths may have any length ("32,64,128").
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import get_type_hints

from ..nn import BackboneSpec
from ..optim import suggested_initial_lr


class ConfigError(Exception):
    """Bad configuration file, key, or value."""


@dataclass
class TrainConfig:
    seed: int = 0
    # synthetic dataset
    volumes: int = 13
    train_split: int = 10
    extents: tuple[int, int, int] = (48, 48, 48)
    class_count: int = 2
    noise_sigma: float = 0.08
    fg_lo: float = 0.01
    fg_hi: float = 0.35
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    # network
    patch: tuple[int, int, int] = (32, 32, 32)
    factors: tuple[int, int, int] = (2, 2, 2)
    k: int = 64
    widths: tuple[int, ...] = (32, 64, 128)
    pool: tuple[int, int, int] = (2, 2, 2)
    activation: str = "relu"
    init_sigma: float = 0.01
    # optimization
    initial_lr: float = 0.0  # 0 looks the rate up by shuffle factors
    lr_halving_period: int = 3000
    momentum: float = 0.9
    weight_decay: float = 0.005
    batch_size: int = 1
    iterations: int = 2000
    lambda_ce: float = 1.0
    lambda_dice: float = 1.0
    augment_count: int = 4
    augment_sigma: float = 15.0
    val_interval: int = 250
    # inference
    stride: tuple[int, int, int] = (0, 0, 0)  # zeros mean half the patch
    # paths
    data_dir: str = "data"
    out_dir: str = "run"

    def resolved_initial_lr(self) -> float:
        if self.initial_lr > 0:
            return self.initial_lr
        try:
            return suggested_initial_lr(self.factors)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def backbone_spec(self) -> BackboneSpec:
        return BackboneSpec(
            class_count=self.class_count,
            in_channels=1,
            factors=self.factors,
            stem_channels=self.k,
            widths=self.widths,
            pool=self.pool,
            act=self.activation,
            init_sigma=self.init_sigma,
        )

    def resolved_stride(self) -> tuple[int, int, int] | None:
        return None if self.stride == (0, 0, 0) else self.stride

    def validate(self) -> "TrainConfig":
        def bad(msg: str) -> ConfigError:
            return ConfigError(msg)

        if self.seed < 0:
            raise bad("seed must be >= 0")
        if self.train_split < 1 or self.volumes <= self.train_split:
            raise bad("need volumes > train_split >= 1 for a held-out split")
        if min(self.extents) < 1 or min(self.patch) < 1:
            raise bad("extents and patch must be positive")
        if any(p > e for p, e in zip(self.patch, self.extents)):
            raise bad(f"patch {self.patch} exceeds volume extents {self.extents}")
        if self.noise_sigma < 0 or self.init_sigma < 0 or self.augment_sigma < 0:
            raise bad("sigmas must be >= 0")
        if not (0.0 <= self.fg_lo < self.fg_hi <= 1.0):
            raise bad("need 0 <= fg_lo < fg_hi <= 1")
        if any(s <= 0 for s in self.spacing):
            raise bad("spacing must be positive")
        if self.batch_size < 1:
            raise bad("batch_size must be >= 1")
        if self.iterations < 0:
            raise bad("iterations must be >= 0")
        if self.val_interval < 1:
            raise bad("val_interval must be >= 1")
        if not (0.0 <= self.momentum < 1.0):
            raise bad("momentum must be in [0, 1)")
        if self.weight_decay < 0 or self.lambda_ce < 0 or self.lambda_dice < 0:
            raise bad("weight_decay and loss weights must be >= 0")
        if self.lr_halving_period < 1:
            raise bad("lr_halving_period must be >= 1")
        if self.augment_count < 0:
            raise bad("augment_count must be >= 0")
        if self.initial_lr < 0:
            raise bad("initial_lr must be >= 0 (0 selects the tabulated rate)")
        if min(self.stride) < 0:
            raise bad("stride components must be >= 0")
        try:
            spec = self.backbone_spec().validate()
            spec.check_input_extents(self.patch)
            for e, f in zip(self.extents, self.factors):
                if e % f:
                    raise ValueError(
                        f"volume extent {e} not divisible by shuffle factor {f}"
                    )
        except ValueError as exc:
            raise bad(str(exc)) from None
        self.resolved_initial_lr()
        return self


_TUPLE_INT3 = {"extents", "patch", "factors", "pool", "stride"}
_TUPLE_FLOAT3 = {"spacing"}
_TUPLE_INT_VAR = {"widths"}


def _parse_value(name: str, raw: str):
    hints = get_type_hints(TrainConfig)
    if name not in hints:
        raise ConfigError(f"unknown configuration key {name!r}")
    try:
        if name in _TUPLE_INT3 or name in _TUPLE_INT_VAR:
            parts = tuple(int(p.strip()) for p in raw.split(","))
            if name in _TUPLE_INT3 and len(parts) != 3:
                raise ValueError(f"expected 3 components, got {len(parts)}")
            if not parts:
                raise ValueError("expected at least one component")
            return parts
        if name in _TUPLE_FLOAT3:
            parts = tuple(float(p.strip()) for p in raw.split(","))
            if len(parts) != 3:
                raise ValueError(f"expected 3 components, got {len(parts)}")
            return parts
        target = hints[name]
        if target is int:
            return int(raw)
        if target is float:
            return float(raw)
        if target is str:
            return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name!r}: {exc}") from None
    raise ConfigError(f"key {name!r} has unsupported type")  # pragma: no cover


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse key=value lines over defaults (or ``base``). Validates the result."""
    cfg = TrainConfig() if base is None else base
    values = {f.name: getattr(cfg, f.name) for f in fields(TrainConfig)}
    for ln, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {ln}: expected key=value, got {line!r}")
        key, _, raw = stripped.partition("=")
        values[key.strip()] = _parse_value(key.strip(), raw.strip())
    return TrainConfig(**values).validate()


def apply_overrides(cfg: TrainConfig, overrides: dict[str, str]) -> TrainConfig:
    values = {f.name: getattr(cfg, f.name) for f in fields(TrainConfig)}
    for key, raw in overrides.items():
        values[key] = _parse_value(key, raw)
    return TrainConfig(**values).validate()


def serialize_config(cfg: TrainConfig) -> str:
    lines = [f"{f.name}={_format_value(getattr(cfg, f.name))}" for f in fields(TrainConfig)]
    return "\n".join(lines) + "\n"


def load_config(path: str | None, overrides: dict[str, str] | None = None) -> TrainConfig:
    if path is None:
        cfg = TrainConfig()
    else:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        cfg = parse_config(text)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg.validate()
