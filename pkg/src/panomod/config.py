"""Model / training configuration with strict validation."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError
from .losses import LossWeights

PRECISIONS = {"float32": np.float32, "float64": np.float64}


@dataclass(frozen=True)
class ModelConfig:
    erp: tuple[int, int] = (64, 128)
    face_size: int = 32
    patch: int = 8
    channels: int = 64
    blocks: int = 4
    heads: int = 4
    modulated_layers: tuple[int, ...] = (1, 3)
    freeze_backbone: bool = True
    loss_weights: LossWeights = field(default_factory=LossWeights)
    lr: float = 1e-3
    steps: int = 500
    seed: int = 0
    precision: str = "float32"
    ecc_moments: str = "face"
    augment: bool = True
    eval_every: int = 0

    def __post_init__(self):
        validate(self)

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    @property
    def token_grid(self) -> tuple[int, int]:
        return self.erp[0] // self.patch, self.erp[1] // self.patch

    @property
    def face_tokens(self) -> int:
        return self.face_size // self.patch

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["erp"] = list(self.erp)
        d["modulated_layers"] = list(self.modulated_layers)
        return d

    def to_json(self) -> str:
        """Canonical JSON (sorted keys, no whitespace); stable byte-for-byte."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def _int(name: str, value, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < minimum:
        raise ConfigError(name, f"expected an integer >= {minimum}, got {value!r}")
    return int(value)


def validate(cfg: ModelConfig) -> None:
    if len(cfg.erp) != 2:
        raise ConfigError("erp", f"expected [H, W], got {cfg.erp!r}")
    h, w = (_int("erp", v, 1) for v in cfg.erp)
    if w != 2 * h:
        raise ConfigError("erp", f"width must equal 2 * height, got {h}x{w}")
    patch = _int("patch", cfg.patch, 2)
    if patch % 2:
        raise ConfigError("patch", f"patch must be even (decoder upsamples x2 then x patch/2), got {patch}")
    face = _int("face_size", cfg.face_size, 2)
    for name, size in (("erp", h), ("erp", w), ("face_size", face)):
        if size % patch:
            raise ConfigError(name, f"patch {patch} does not divide {size}")
    if face // patch < 2:
        raise ConfigError("face_size", f"face_size / patch must be >= 2, got {face // patch}")
    if h // patch < 2:
        raise ConfigError("erp", f"erp height / patch must be >= 2, got {h // patch}")
    channels = _int("channels", cfg.channels, 1)
    blocks = _int("blocks", cfg.blocks, 1)
    heads = _int("heads", cfg.heads, 1)
    if channels % heads:
        raise ConfigError("heads", f"{heads} heads do not divide {channels} channels")
    for idx in cfg.modulated_layers:
        if isinstance(idx, bool) or not isinstance(idx, (int, np.integer)) or not 0 <= idx < blocks:
            raise ConfigError(
                "modulated_layers",
                f"modulated-layer indices must lie in [0, {blocks}), got {list(cfg.modulated_layers)}",
            )
    if len(set(cfg.modulated_layers)) != len(cfg.modulated_layers):
        raise ConfigError("modulated_layers", "modulated-layer indices contain duplicates")
    if not isinstance(cfg.freeze_backbone, bool):
        raise ConfigError("freeze_backbone", f"expected true/false, got {cfg.freeze_backbone!r}")
    if not isinstance(cfg.augment, bool):
        raise ConfigError("augment", f"expected true/false, got {cfg.augment!r}")
    if not isinstance(cfg.lr, (int, float)) or not math.isfinite(cfg.lr) or cfg.lr < 0:
        raise ConfigError("lr", f"expected a finite number >= 0, got {cfg.lr!r}")
    _int("steps", cfg.steps, 0)
    _int("seed", cfg.seed, 0)
    _int("eval_every", cfg.eval_every, 0)
    if cfg.precision not in PRECISIONS:
        raise ConfigError("precision", f"expected one of {sorted(PRECISIONS)}, got {cfg.precision!r}")
    if cfg.ecc_moments not in ("face", "global"):
        raise ConfigError("ecc_moments", f"expected 'face' or 'global', got {cfg.ecc_moments!r}")


_FIELDS = {f.name for f in fields(ModelConfig)}


def config_from_dict(raw: dict) -> ModelConfig:
    """Build a config from parsed JSON; unknown keys are rejected."""
    if not isinstance(raw, dict):
        raise ConfigError("config", f"expected a JSON object, got {type(raw).__name__}")
    unknown = sorted(set(raw) - _FIELDS)
    if unknown:
        raise ConfigError(unknown[0], f"unknown config key(s) {unknown}")
    kw = dict(raw)
    if "erp" in kw:
        if not isinstance(kw["erp"], (list, tuple)):
            raise ConfigError("erp", f"expected [H, W], got {kw['erp']!r}")
        kw["erp"] = tuple(kw["erp"])
    if "modulated_layers" in kw:
        if not isinstance(kw["modulated_layers"], (list, tuple)):
            raise ConfigError("modulated_layers", "modulated-layer indices must be a list")
        kw["modulated_layers"] = tuple(kw["modulated_layers"])
    if "loss_weights" in kw:
        lw = kw["loss_weights"]
        if not isinstance(lw, dict) or set(lw) - {"lambda_e", "silog_lambda"}:
            raise ConfigError("loss_weights", f"expected {{lambda_e, silog_lambda}}, got {lw!r}")
        try:
            kw["loss_weights"] = LossWeights(**lw)
        except (DomainError, TypeError) as exc:
            raise ConfigError("loss_weights", str(exc)) from None
    return ModelConfig(**kw)


def read_config(path) -> ModelConfig:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from None
    return config_from_dict(raw)
