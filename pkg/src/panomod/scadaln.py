"""Self-conditioned AdaLN-Zero transformer block.

A guidance map (1, C, H, W) passes through SiLU and a depthwise-separable
convolution to give six pixel-wise parameter groups. These shift/scale the
affine-free LayerNorm outputs and gate both residual branches. The pointwise
stage starts at zero, so a fresh block is the identity map.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import DEFAULT_EPS, Tensor
from .errors import DimensionError

MOD_GROUPS = ("beta_attn", "gamma_attn", "g_attn", "beta_mlp", "gamma_mlp", "g_mlp")


@dataclass
class ModulationParams:
    beta_attn: Tensor
    gamma_attn: Tensor
    g_attn: Tensor
    beta_mlp: Tensor
    gamma_mlp: Tensor
    g_mlp: Tensor

    @classmethod
    def zeros(cls, shape: tuple[int, ...], dtype=np.float64) -> "ModulationParams":
        return cls(*(Tensor(np.zeros(shape, dtype=dtype)) for _ in MOD_GROUPS))

    def groups(self) -> list[Tensor]:
        return [getattr(self, f.name) for f in fields(self)]


@dataclass
class ModNetParams:
    """SiLU -> depthwise 3x3 (C) -> pointwise 1x1 (C -> 6C, with bias)."""

    dw_weight: Tensor  # (C, 3, 3)
    pw_weight: Tensor  # (6C, C, 1, 1), zero at init
    pw_bias: Tensor  # (6C,), zero at init

    @classmethod
    def init(cls, channels: int, rng: np.random.Generator, dtype=np.float64) -> "ModNetParams":
        dw = rng.normal(0.0, 1.0 / 3.0, size=(channels, 3, 3)).astype(dtype)
        return cls(
            Tensor(dw, requires_grad=True),
            Tensor(np.zeros((6 * channels, channels, 1, 1), dtype=dtype), requires_grad=True),
            Tensor(np.zeros(6 * channels, dtype=dtype), requires_grad=True),
        )

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.dw_weight": self.dw_weight,
            f"{prefix}.pw_weight": self.pw_weight,
            f"{prefix}.pw_bias": self.pw_bias,
        }


@dataclass
class BlockParams:
    wqkv: Tensor  # (C, 3C)
    bqkv: Tensor
    wo: Tensor  # (C, C)
    bo: Tensor
    w1: Tensor  # (C, 4C)
    b1: Tensor
    w2: Tensor  # (4C, C)
    b2: Tensor
    heads: int

    @classmethod
    def init(cls, channels: int, heads: int, rng: np.random.Generator, dtype=np.float64) -> "BlockParams":
        if channels % heads:
            raise DimensionError(f"heads ({heads}) must divide channels ({channels})")

        def lin(n_in, n_out):
            w = rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out)).astype(dtype)
            return Tensor(w, requires_grad=True), Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True)

        wqkv, bqkv = lin(channels, 3 * channels)
        wo, bo = lin(channels, channels)
        w1, b1 = lin(channels, 4 * channels)
        w2, b2 = lin(4 * channels, channels)
        return cls(wqkv, bqkv, wo, bo, w1, b1, w2, b2, heads)

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.{f.name}": getattr(self, f.name) for f in fields(self) if f.name != "heads"}


def gen_modulation(f_gag, p: ModNetParams) -> ModulationParams:
    """Six (1, C, H, W) parameter maps from the guidance signal, in ``MOD_GROUPS`` order."""
    f_gag = ad.as_tensor(f_gag)
    c = f_gag.shape[1]
    if p.dw_weight.shape[0] != c or p.pw_weight.shape != (6 * c, c, 1, 1):
        raise DimensionError(
            f"modulation net built for {p.dw_weight.shape[0]} channels, guidance has {c} ({f_gag.shape})"
        )
    hidden = ad.depthwise_conv2d(ad.pad_erp(ad.silu(f_gag), 1), p.dw_weight)
    packed = ad.conv2d(hidden, p.pw_weight, p.pw_bias)
    return ModulationParams(*ad.split(packed, 6, axis=1))


def modulate(f, beta, gamma):
    """``f * (1 + gamma) + beta``."""
    f, beta, gamma = ad.as_tensor(f), ad.as_tensor(beta), ad.as_tensor(gamma)
    if not (f.shape == beta.shape == gamma.shape):
        raise DimensionError(f"modulate shapes differ: {f.shape}, {beta.shape}, {gamma.shape}")
    return f * (1.0 + gamma) + beta


def grid_to_tokens(x: Tensor) -> Tensor:
    """(1, C, H, W) -> (H*W, C), row-major token order."""
    _, c, h, w = x.shape
    return x.reshape(c, h * w).transpose(1, 0)


def tokens_to_grid(t: Tensor, h: int, w: int) -> Tensor:
    n, c = t.shape
    return t.transpose(1, 0).reshape(1, c, h, w)


def attention(x: Tensor, bp: BlockParams) -> Tensor:
    """Multi-head self-attention over all tokens of an (N, C) matrix."""
    n, c = x.shape
    heads = bp.heads
    d = c // heads
    qkv = (x @ bp.wqkv + bp.bqkv).reshape(n, 3, heads, d).transpose(1, 2, 0, 3)
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = (q @ k.transpose(0, 2, 1)) * (1.0 / np.sqrt(d))
    mixed = ad.softmax(scores, axis=-1) @ v  # heads, n, d
    return mixed.transpose(1, 0, 2).reshape(n, c) @ bp.wo + bp.bo


def mlp(x: Tensor, bp: BlockParams) -> Tensor:
    return ad.gelu(x @ bp.w1 + bp.b1) @ bp.w2 + bp.b2


def modulated_block(x, mods: ModulationParams, bp: BlockParams, eps: float = DEFAULT_EPS) -> Tensor:
    """Pre-LN block with modulated norms and gated residuals.

    x and every modulation group are (1, C, H, W) grids; attention runs over
    the H*W tokens.
    """
    x = ad.as_tensor(x)
    _, c, h, w = x.shape
    for name, grp in zip(MOD_GROUPS, mods.groups()):
        if grp.shape != x.shape:
            raise DimensionError(f"{name} has shape {grp.shape}, features have {x.shape}")
    t = grid_to_tokens(x)
    beta_a, gamma_a, g_a, beta_m, gamma_m, g_m = (grid_to_tokens(g) for g in mods.groups())
    hdn = t + g_a * attention(modulate(ad.layernorm_noaffine(t, eps, axis=-1), beta_a, gamma_a), bp)
    out = hdn + g_m * mlp(modulate(ad.layernorm_noaffine(hdn, eps, axis=-1), beta_m, gamma_m), bp)
    return tokens_to_grid(out, h, w)


def plain_block(x, bp: BlockParams, eps: float = DEFAULT_EPS) -> Tensor:
    """Unmodulated pre-LN transformer block on a (1, C, H, W) grid."""
    x = ad.as_tensor(x)
    _, _, h, w = x.shape
    t = grid_to_tokens(x)
    hdn = t + attention(ad.layernorm_noaffine(t, eps, axis=-1), bp)
    out = hdn + mlp(ad.layernorm_noaffine(hdn, eps, axis=-1), bp)
    return tokens_to_grid(out, h, w)
