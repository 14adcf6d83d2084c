"""Geometry-aligned guidance.

ERP features are projected onto the cube, the CP-branch features are
re-standardized to those per-face statistics, projected back to ERP, and
blended with the original ERP features through a learned sigmoid gate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DEFAULT_EPS, Tensor
from .errors import DimensionError
from .geometry import check_cubeset, cube_to_erp, erp_to_cube


@dataclass
class GagParams:
    """3x3 gate convolution mapping [aligned, erp] (2C channels) to C channels."""

    weight: Tensor  # (C, 2C, 3, 3)
    bias: Tensor  # (C,)

    @classmethod
    def zeros(cls, channels: int, dtype=np.float64) -> "GagParams":
        # zero init gives G = 0.5 everywhere: an unbiased blend at the start
        return cls(
            Tensor(np.zeros((channels, 2 * channels, 3, 3), dtype=dtype), requires_grad=True),
            Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
        )

    def named(self, prefix: str = "gag") -> dict[str, Tensor]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


@dataclass
class GuidanceBundle:
    f_erp: Tensor
    f_cp: Tensor
    f_e2c: Tensor
    f_cp_aligned: Tensor
    f_aligned: Tensor
    gate: Tensor
    f_gag: Tensor


def stat_align(f_cp, f_e2c, eps: float = DEFAULT_EPS) -> Tensor:
    """Give each (face, channel) of ``f_cp`` the mean/std of ``f_e2c``.

    Parameter-free: ``sigma_e2c * (f_cp - mu_cp) / sigma_cp + mu_e2c``, with
    moments over each face's spatial extent and eps inside the square root.
    """
    f_cp, f_e2c = ad.as_tensor(f_cp), ad.as_tensor(f_e2c)
    if f_cp.shape != f_e2c.shape:
        raise DimensionError(f"stat_align shape mismatch: {f_cp.shape} vs {f_e2c.shape}")
    mu_cp, sd_cp = ad.reduce_moments(f_cp, "spatial", eps)
    mu_e, sd_e = ad.reduce_moments(f_e2c, "spatial", eps)
    return sd_e * ((f_cp - mu_cp) / sd_cp) + mu_e


def gate(f_aligned, f_erp, params: GagParams) -> Tensor:
    """``sigmoid(conv3x3([f_aligned || f_erp]))``, longitude-circular padding."""
    f_aligned, f_erp = ad.as_tensor(f_aligned), ad.as_tensor(f_erp)
    if f_aligned.shape != f_erp.shape:
        raise DimensionError(f"gate inputs differ: {f_aligned.shape} vs {f_erp.shape}")
    c = f_erp.shape[1]
    if params.weight.shape != (c, 2 * c, 3, 3):
        raise DimensionError(
            f"gate weight {params.weight.shape} does not fit {c} channels, expected {(c, 2 * c, 3, 3)}"
        )
    stacked = ad.concat([f_aligned, f_erp], axis=1)
    return ad.sigmoid(ad.conv2d(ad.pad_erp(stacked, 1), params.weight, params.bias))


def guidance(f_erp, f_cp, params: GagParams, eps: float = DEFAULT_EPS) -> GuidanceBundle:
    """Full guidance pipeline: E2C, align, C2E, gate, blend."""
    f_erp, f_cp = ad.as_tensor(f_erp), ad.as_tensor(f_cp)
    if f_erp.ndim != 4 or f_erp.shape[0] != 1:
        raise DimensionError(f"f_erp must be (1, C, H, W), got {f_erp.shape}")
    check_cubeset(f_cp)
    if f_cp.shape[1] != f_erp.shape[1]:
        raise DimensionError(f"channel mismatch: ERP {f_erp.shape} vs CP {f_cp.shape}")
    h, w = f_erp.shape[2], f_erp.shape[3]
    f_e2c = erp_to_cube(f_erp, f_cp.shape[2])
    f_cp_aligned = stat_align(f_cp, f_e2c, eps)
    f_aligned = cube_to_erp(f_cp_aligned, (h, w))
    g = gate(f_aligned, f_erp, params)
    f_gag = g * f_aligned + (1.0 - g) * f_erp
    return GuidanceBundle(f_erp, f_cp, f_e2c, f_cp_aligned, f_aligned, g, f_gag)
