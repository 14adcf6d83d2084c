"""Supervised depth objective: SILog + gradient loss + cubemap consistency loss."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DEFAULT_EPS, Tensor
from .errors import DimensionError, DomainError
from .geometry import erp_to_cube


@dataclass(frozen=True)
class LossWeights:
    lambda_e: float = 1.0
    silog_lambda: float = 0.5

    def __post_init__(self):
        if not (math.isfinite(self.lambda_e) and self.lambda_e >= 0):
            raise DomainError(f"lambda_e must be finite and >= 0, got {self.lambda_e}")
        if not (0.0 <= self.silog_lambda <= 1.0):
            raise DomainError(f"silog_lambda must lie in [0, 1], got {self.silog_lambda}")


def _mask_array(mask, shape, dtype) -> np.ndarray | None:
    if mask is None:
        return None
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask)
    if m.shape != shape:
        raise DimensionError(f"mask shape {m.shape} != depth shape {shape}")
    return m.astype(dtype)


def psi(d, eps: float = DEFAULT_EPS, mask=None) -> Tensor:
    """Scale-shift normalization ``(d - mu) / (sigma + eps)`` per map.

    Moments are taken over each map's full extent (all of C, H, W for one
    batch entry), sigma = sqrt(biased var + eps). With a mask, only valid
    pixels enter the moments; invalid pixels come out as 0.
    """
    d = ad.as_tensor(d)
    if d.ndim != 4:
        raise DimensionError(f"psi expects (B, 1, H, W) maps, got {d.shape}")
    m = _mask_array(mask, d.shape, d.dtype)
    if m is None:
        mu, sigma = ad.reduce_moments(d, "full", eps)
        return (d - mu) / (sigma + eps)
    count = np.maximum(m.sum(axis=(1, 2, 3), keepdims=True), 1.0)
    mu = (d * m).sum(axis=(1, 2, 3), keepdims=True) / count
    centered = (d - mu) * m
    var = (centered * centered).sum(axis=(1, 2, 3), keepdims=True) / count
    return centered / (ad.sqrt(var + eps) + eps)


def ecc_loss(
    pred_erp,
    gt_erp,
    face_size: int | None = None,
    eps: float = DEFAULT_EPS,
    moments: str = "face",
    mask=None,
) -> Tensor:
    """Mean absolute difference of psi-normalized cube faces, averaged over the 6 faces.

    ``moments="face"`` normalizes each face on its own; ``"global"`` uses
    one set of moments over all six faces.
    """
    pred_erp, gt_erp = ad.as_tensor(pred_erp), ad.as_tensor(gt_erp)
    if pred_erp.shape != gt_erp.shape:
        raise DimensionError(f"ecc_loss shapes differ: {pred_erp.shape} vs {gt_erp.shape}")
    pred_c = erp_to_cube(pred_erp, face_size)
    gt_c = erp_to_cube(gt_erp, face_size)
    face_mask = None
    if mask is not None:
        m = _mask_array(mask, pred_erp.shape, np.float64)
        # a face pixel counts only if its whole bilinear footprint is valid
        face_mask = erp_to_cube(m, face_size).data > 1.0 - 1e-9
    if moments == "global":
        n = pred_c.shape[0]
        s = pred_c.shape[2]
        flat = lambda t: t.reshape(1, n, s, s)  # noqa: E731
        fm = None if face_mask is None else face_mask.reshape(1, n, s, s)
        diff = ad.absolute(psi(flat(gt_c), eps, fm) - psi(flat(pred_c), eps, fm))
        face_mask = fm
    elif moments == "face":
        diff = ad.absolute(psi(gt_c, eps, face_mask) - psi(pred_c, eps, face_mask))
    else:
        raise DomainError(f"moments must be 'face' or 'global', got {moments!r}")
    if face_mask is None:
        return diff.mean()
    fm = face_mask.astype(diff.dtype)
    per_face = (diff * fm).sum(axis=(1, 2, 3)) / np.maximum(fm.sum(axis=(1, 2, 3)), 1.0)
    return per_face.mean()


def _log_residual(pred: Tensor, gt: Tensor, m: np.ndarray | None) -> Tensor:
    if pred.shape != gt.shape:
        raise DimensionError(f"pred {pred.shape} and gt {gt.shape} differ")
    valid = np.ones(pred.shape, dtype=bool) if m is None else m.astype(bool)
    if np.any(gt.data[valid] <= 0) or np.any(pred.data[valid] <= 0):
        raise DomainError("depth must be positive on valid pixels")
    if m is None:
        return ad.log(pred) - ad.log(gt)
    safe_gt = np.where(valid, gt.data, 1.0)
    safe_pred = pred * m + (1.0 - m)
    return (ad.log(safe_pred) - np.log(safe_gt)) * m


def silog_loss(pred, gt, mask=None, lam: float = 0.5) -> Tensor:
    """``mean(g^2) - lam * mean(g)^2`` with ``g = log pred - log gt`` on valid pixels."""
    pred, gt = ad.as_tensor(pred), ad.as_tensor(gt)
    m = _mask_array(mask, pred.shape, pred.dtype)
    g = _log_residual(pred, gt, m)
    n = float(g.data.size if m is None else m.sum())
    if n == 0:
        raise DomainError("silog_loss: mask selects no pixels")
    mean_g = g.sum() / n
    return (g * g).sum() / n - lam * (mean_g * mean_g)


def grad_loss(pred, gt, mask=None) -> Tensor:
    """Mean L1 of forward differences of the log-depth residual.

    Horizontal pairs wrap around in longitude (W pairs per row); vertical
    pairs stop at the last row (H - 1 pairs per column). A pair counts only
    if both pixels are valid, and all valid pairs are pooled into one mean.
    """
    pred, gt = ad.as_tensor(pred), ad.as_tensor(gt)
    m = _mask_array(mask, pred.shape, pred.dtype)
    r = _log_residual(pred, gt, m)
    dx = ad.roll(r, -1, axis=3) - r
    dy = r[:, :, 1:, :] - r[:, :, :-1, :]
    if m is None:
        mx = np.ones(dx.shape, dtype=pred.dtype)
        my = np.ones(dy.shape, dtype=pred.dtype)
    else:
        mx = m * np.roll(m, -1, axis=3)
        my = m[:, :, 1:, :] * m[:, :, :-1, :]
    count = float(mx.sum() + my.sum())
    if count == 0:
        return Tensor(np.zeros((), dtype=pred.dtype))
    return ((ad.absolute(dx) * mx).sum() + (ad.absolute(dy) * my).sum()) / count


def total_loss(pred, gt, mask=None, w: LossWeights = LossWeights(), face_size: int | None = None,
               ecc_moments: str = "face") -> tuple[Tensor, dict[str, float]]:
    """Weighted sum ``silog + grad + lambda_e * ecc`` plus a float breakdown for logging."""
    pred, gt = ad.as_tensor(pred), ad.as_tensor(gt)
    l_silog = silog_loss(pred, gt, mask, w.silog_lambda)
    l_grad = grad_loss(pred, gt, mask)
    l_ecc = ecc_loss(pred, gt, face_size, moments=ecc_moments, mask=mask)
    total = l_silog + l_grad + w.lambda_e * l_ecc
    breakdown = {
        "silog": l_silog.item(),
        "grad": l_grad.item(),
        "ecc": l_ecc.item(),
        "total": total.item(),
    }
    return total, breakdown
