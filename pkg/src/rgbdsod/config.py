"""Experiment configuration: loading, validation and derived stage geometry.

Configs are flat JSON objects. Any key left out takes its toy-scale default,
so ``{}`` is a complete config that runs a CPU forward pass in seconds.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

VARIANTS = ("full", "no_edge", "rgb_only", "depth_only", "no_fdec", "no_dsd", "cmi_v2")
NUM_STAGES = 5


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration; ``key`` names the culprit."""

    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


@dataclass(frozen=True)
class RunConfig:
    # architecture
    input_size: int = 64
    patch_size: int = 4
    embed_dim: int = 32
    depths: tuple[int, ...] = (2, 2, 2, 2)
    num_heads: tuple[int, ...] = (1, 2, 4, 8)
    window_size: int = 4
    mlp_ratio: float = 4.0
    drop_rate: float = 0.0
    attn_drop_rate: float = 0.0
    drop_path_rate: float = 0.0
    cmi_stages: tuple[int, ...] = (4, 5)
    cmi_blocks: int = 1
    cmi_dropout: float = 0.1
    gma_dropout: float = 0.1
    decoder_width: int = 32
    variant: str = "full"
    # optimization
    lr: float = 5e-4
    lr_decay_gamma: float = 0.1
    lr_decay_every_epochs: int = 100
    batch_size: int = 4
    epochs: int = 10
    max_steps: Optional[int] = None
    weight_decay: float = 0.0
    grad_clip: Optional[float] = None
    seed: int = 0
    # data
    train_dir: Optional[str] = None
    val_dir: Optional[str] = None
    test_dir: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        for k in ("depths", "num_heads", "cmi_stages"):
            d[k] = list(d[k])
        return d

    def replace(self, **changes: Any) -> "RunConfig":
        return from_dict({**self.to_dict(), **changes})

    @property
    def uses_depth(self) -> bool:
        return self.variant != "rgb_only"

    @property
    def uses_rgb(self) -> bool:
        return self.variant != "depth_only"

    @property
    def effective_cmi_stages(self) -> tuple[int, ...]:
        """CMI placements actually built; single-modality variants have none."""
        if self.variant in ("rgb_only", "depth_only"):
            return ()
        return self.cmi_stages


@dataclass(frozen=True)
class StageGeometry:
    resolutions: tuple[int, ...] = field(default_factory=tuple)
    channels: tuple[int, ...] = field(default_factory=tuple)

    def shape(self, stage: int) -> tuple[int, int, int]:
        """(channels, height, width) of 1-based ``stage``."""
        r = self.resolutions[stage - 1]
        return self.channels[stage - 1], r, r


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_INT_KEYS = {
    "input_size", "patch_size", "embed_dim", "window_size", "cmi_blocks",
    "decoder_width", "lr_decay_every_epochs", "batch_size", "epochs", "seed",
}
_FLOAT_KEYS = {
    "mlp_ratio", "drop_rate", "attn_drop_rate", "drop_path_rate", "cmi_dropout",
    "gma_dropout", "lr", "lr_decay_gamma", "weight_decay",
}
_INT_LIST_KEYS = {"depths", "num_heads", "cmi_stages"}
_OPT_STR_KEYS = {"train_dir", "val_dir", "test_dir"}


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _coerce(key: str, value: Any) -> Any:
    if key in _INT_KEYS:
        if not _is_int(value):
            raise ConfigError(f"expected integer, got {type(value).__name__}", key)
        return value
    if key in _FLOAT_KEYS:
        if not (_is_int(value) or isinstance(value, float)):
            raise ConfigError(f"expected number, got {type(value).__name__}", key)
        return float(value)
    if key in _INT_LIST_KEYS:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"expected list of integers, got {type(value).__name__}", key)
        for i, item in enumerate(value):
            if not _is_int(item):
                raise ConfigError(f"expected integer, got {type(item).__name__}", f"{key}[{i}]")
        if key == "cmi_stages":
            return tuple(sorted(set(value)))
        return tuple(value)
    if key == "variant":
        if not isinstance(value, str):
            raise ConfigError(f"expected string, got {type(value).__name__}", key)
        return value
    if key == "max_steps":
        if value is not None and not _is_int(value):
            raise ConfigError(f"expected integer or null, got {type(value).__name__}", key)
        return value
    if key == "grad_clip":
        if value is not None and not (_is_int(value) or isinstance(value, float)):
            raise ConfigError(f"expected number or null, got {type(value).__name__}", key)
        return None if value is None else float(value)
    if key in _OPT_STR_KEYS:
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"expected path string or null, got {type(value).__name__}", key)
        return value
    raise ConfigError("unknown key", key)  # pragma: no cover


def from_dict(data: dict[str, Any]) -> RunConfig:
    """Build a RunConfig from a flat mapping, filling defaults and type-checking."""
    if not isinstance(data, dict):
        raise ConfigError(f"config document must be a JSON object, got {type(data).__name__}")
    kwargs = {}
    for key, value in data.items():
        if key not in _FIELDS:
            raise ConfigError("unknown key", key)
        kwargs[key] = _coerce(key, value)
    return RunConfig(**kwargs)


def validate_config(cfg: RunConfig) -> RunConfig:
    """Return ``cfg`` unchanged if every invariant holds, else raise ConfigError."""
    if cfg.variant not in VARIANTS:
        raise ConfigError(f"{cfg.variant!r} is not one of {', '.join(VARIANTS)}", "variant")
    for key in ("input_size", "patch_size", "embed_dim", "window_size", "decoder_width",
                "batch_size", "epochs", "lr_decay_every_epochs"):
        if getattr(cfg, key) <= 0:
            raise ConfigError("must be strictly positive", key)
    if cfg.cmi_blocks < 0:
        raise ConfigError("must be non-negative", "cmi_blocks")
    if cfg.max_steps is not None and cfg.max_steps <= 0:
        raise ConfigError("must be strictly positive", "max_steps")
    if cfg.lr <= 0:
        raise ConfigError("learning rate must be strictly positive", "lr")
    if cfg.lr_decay_gamma <= 0:
        raise ConfigError("decay rate must be strictly positive", "lr_decay_gamma")
    if cfg.mlp_ratio <= 0:
        raise ConfigError("must be strictly positive", "mlp_ratio")
    if cfg.weight_decay < 0:
        raise ConfigError("must be non-negative", "weight_decay")
    if cfg.grad_clip is not None and cfg.grad_clip <= 0:
        raise ConfigError("must be positive or null", "grad_clip")
    for key in ("drop_rate", "attn_drop_rate", "drop_path_rate", "cmi_dropout", "gma_dropout"):
        if not 0.0 <= getattr(cfg, key) < 1.0:
            raise ConfigError("dropout rate must lie in [0, 1)", key)

    for key in ("depths", "num_heads"):
        seq = getattr(cfg, key)
        if len(seq) != NUM_STAGES - 1:
            raise ConfigError(f"must have exactly {NUM_STAGES - 1} entries, got {len(seq)}", key)
        if any(v <= 0 for v in seq):
            raise ConfigError("entries must be strictly positive", key)

    step = cfg.patch_size * 2 ** 3
    if cfg.input_size % step:
        raise ConfigError(
            f"{cfg.input_size} is not divisible by patch_size * 2^3 = {step}", "input_size")

    geo = derive_stage_geometry(cfg)
    for stage in range(2, NUM_STAGES + 1):
        heads = cfg.num_heads[stage - 2]
        if geo.channels[stage - 1] % heads:
            raise ConfigError(
                f"stage {stage}: {geo.channels[stage - 1]} channels not divisible by {heads} heads",
                "num_heads")

    bad = [s for s in cfg.cmi_stages if s not in range(2, NUM_STAGES + 1)]
    if bad:
        raise ConfigError(f"stages {bad} outside {{2,3,4,5}}", "cmi_stages")
    if cfg.variant == "cmi_v2" and not cfg.cmi_stages:
        raise ConfigError("variant cmi_v2 requires at least one CMI stage", "cmi_stages")
    if cfg.decoder_width < 4:
        raise ConfigError("channel attention needs at least 4 channels", "decoder_width")
    if cfg.embed_dim < 4:
        raise ConfigError("channel attention needs at least 4 channels", "embed_dim")
    return cfg


def derive_stage_geometry(cfg: RunConfig) -> StageGeometry:
    r1 = cfg.input_size // cfg.patch_size
    resolutions = (r1, r1, r1 // 2, r1 // 4, r1 // 8)
    channels = (cfg.embed_dim, cfg.embed_dim, 2 * cfg.embed_dim, 4 * cfg.embed_dim,
                8 * cfg.embed_dim)
    return StageGeometry(resolutions, channels)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    return validate_config(from_dict(data))


def save_config(cfg: RunConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    return path

