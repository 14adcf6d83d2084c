"""Depth error metrics and representation-drift diagnostics."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionError, DomainError

DELTA_BASE = 1.25


@dataclass
class MetricReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    delta1: float  # percent
    delta2: float
    delta3: float
    pixel_count: int
    median_scaled: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def average(cls, reports: list["MetricReport"]) -> "MetricReport":
        """Unweighted mean over images, accumulated in list order."""
        if not reports:
            raise DomainError("cannot average an empty list of reports")
        keys = ("abs_rel", "sq_rel", "rmse", "delta1", "delta2", "delta3")
        means = {k: float(np.mean([getattr(r, k) for r in reports])) for k in keys}
        return cls(
            **means,
            pixel_count=int(sum(r.pixel_count for r in reports)),
            median_scaled=all(r.median_scaled for r in reports),
        )


@dataclass
class DriftReport:
    cosine: list[float] = field(default_factory=list)
    cka: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"layers": len(self.cosine), "cosine": self.cosine, "cka": self.cka}


def depth_metrics(pred, gt, mask=None, median_scale: bool = False) -> MetricReport:
    """Abs Rel, Sq Rel, RMSE and delta accuracies over valid pixels.

    With ``median_scale`` the prediction is first multiplied by
    ``median(gt) / median(pred)``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionError(f"pred {pred.shape} and gt {gt.shape} differ")
    valid = np.ones(gt.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if valid.shape != gt.shape:
        raise DimensionError(f"mask {valid.shape} does not match depth {gt.shape}")
    if not valid.any():
        raise DomainError("depth_metrics: mask selects no pixels")
    p, d = pred[valid], gt[valid]
    if np.any(d <= 0):
        raise DomainError("ground-truth depth must be positive on valid pixels")
    if median_scale:
        p = p * (np.median(d) / np.median(p))
    if np.any(p <= 0):
        raise DomainError("predicted depth must be positive on valid pixels")
    err = p - d
    ratio = np.maximum(p / d, d / p)
    return MetricReport(
        abs_rel=float(np.mean(np.abs(err) / d)),
        sq_rel=float(np.mean(err**2 / d)),
        rmse=float(np.sqrt(np.mean(err**2))),
        delta1=float(100.0 * np.mean(ratio < DELTA_BASE)),
        delta2=float(100.0 * np.mean(ratio < DELTA_BASE**2)),
        delta3=float(100.0 * np.mean(ratio < DELTA_BASE**3)),
        pixel_count=int(valid.sum()),
        median_scaled=median_scale,
    )


def cosine_layerwise(a, b) -> list[float]:
    """Cosine similarity of flattened features, one value per layer."""
    if len(a) != len(b):
        raise DimensionError(f"layer counts differ: {len(a)} vs {len(b)}")
    out = []
    for k, (x, y) in enumerate(zip(a, b)):
        x = np.asarray(x, dtype=np.float64).ravel()
        y = np.asarray(y, dtype=np.float64).ravel()
        if x.shape != y.shape:
            raise DimensionError(f"layer {k}: shapes {x.shape} vs {y.shape}")
        nx, ny = np.linalg.norm(x), np.linalg.norm(y)
        if nx == 0 or ny == 0:
            warnings.warn(f"layer {k}: zero-norm features, cosine set to 0", RuntimeWarning, stacklevel=2)
            out.append(0.0)
            continue
        out.append(float(np.clip(x @ y / (nx * ny), -1.0, 1.0)))
    return out


def linear_cka(a, b) -> float:
    """Linear CKA between (samples, features) matrices; columns are centred here."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise DimensionError(f"need (n, p) and (n, q) matrices, got {a.shape} and {b.shape}")
    if a.shape[0] < 2:
        raise DomainError("linear_cka needs at least 2 samples")
    a = a - a.mean(axis=0, keepdims=True)
    b = b - b.mean(axis=0, keepdims=True)
    cross = np.linalg.norm(a.T @ b) ** 2
    denom = np.linalg.norm(a.T @ a) * np.linalg.norm(b.T @ b)
    if denom == 0:
        return 0.0
    return float(np.clip(cross / denom, 0.0, 1.0))


def drift_report(a_layers, b_layers) -> DriftReport:
    """Per-layer cosine and CKA between two stacks of (tokens, channels) features."""
    cos = cosine_layerwise(a_layers, b_layers)
    cka = [linear_cka(x, y) for x, y in zip(a_layers, b_layers)]
    return DriftReport(cos, cka)
