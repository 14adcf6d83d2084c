"""Fast built-in invariant checks behind ``panomod selftest``.

Each check returns ``(ok, detail)``; the whole suite runs in a few seconds on
a reduced configuration.
"""

from __future__ import annotations

from typing import Callable, Iterator

import numpy as np

from . import autodiff as ad
from .config import ModelConfig
from .geometry import build_sampling_map, cube_to_erp, erp_to_cube, resample_adjoint
from .io import decode_checkpoint, decode_pfm, encode_checkpoint, encode_pfm
from .losses import ecc_loss, total_loss
from .metrics import depth_metrics, linear_cka
from .model import DepthModel
from .scenes import make_scene, render
from .train import to_checkpoint
from .optim import AdamState

SMALL = ModelConfig(erp=(16, 32), face_size=8, patch=4, channels=8, blocks=2, heads=2,
                    modulated_layers=(1,), precision="float64")


def _zero_init_identity():
    model = DepthModel(SMALL)
    rgb = ad.rng_stream(0, 99).random((1, 3, *SMALL.erp))
    on, off = model.predict(rgb), model.predict(rgb, modulation=False)
    return bool(np.array_equal(on, off)), f"max |diff| = {np.abs(on - off).max():.1e}"


def _sampling_maps():
    worst_row, worst_adj = 0.0, 0.0
    rng = ad.rng_stream(0, 98)
    for direction in ("e2c", "c2e"):
        m = build_sampling_map(direction, (16, 32), 8)
        worst_row = max(worst_row, float(np.abs(m.weight.sum(axis=1) - 1).max()))
        x = rng.normal(size=(m.in_shape[0], 2, *m.in_shape[1:]))
        y = rng.normal(size=(m.out_shape[0], 2, *m.out_shape[1:]))
        fwd = erp_to_cube(x, 8).data if direction == "e2c" else cube_to_erp(x, (16, 32)).data
        lhs, rhs = float(np.sum(fwd * y)), float(np.sum(x * resample_adjoint(y, m)))
        worst_adj = max(worst_adj, abs(lhs - rhs) / max(abs(lhs), 1.0))
    ok = worst_row <= 1e-12 and worst_adj <= 1e-10
    return ok, f"row-sum err {worst_row:.1e}, adjoint err {worst_adj:.1e}"


def _ecc_invariance():
    _, depth = render(make_scene(3), 32, 64)
    exact = ecc_loss(depth, depth, 16).item()
    shifted = ecc_loss(2.0 * depth + 1.0, depth, 16).item()
    return exact == 0.0 and shifted < 1e-4, f"ecc(D,D) = {exact}, ecc(2D+1,D) = {shifted:.1e}"


def _loss_gradient():
    rng = ad.rng_stream(0, 97)
    gt = rng.uniform(1.0, 4.0, size=(1, 1, 8, 16))
    pred = rng.uniform(1.0, 4.0, size=(1, 1, 8, 16))
    err = max(ad.gradcheck(lambda p: total_loss(p, gt, face_size=4)[0], [pred]))
    return err < 1e-6, f"total-loss gradcheck rel err {err:.1e}"


def _metrics_bracket():
    gt = np.linspace(1.0, 5.0, 50)
    r = depth_metrics(1.26 * gt, gt)
    return r.delta1 == 0.0 and r.delta2 == 100.0, f"delta1 {r.delta1}, delta2 {r.delta2}"


def _cka_self():
    a = ad.rng_stream(0, 96).normal(size=(40, 6))
    v = linear_cka(a, a)
    return abs(v - 1.0) < 1e-12, f"CKA(A, A) = {v!r}"


def _formats_roundtrip():
    grid = ad.rng_stream(0, 95).normal(size=(1, 1, 5, 7)).astype(np.float32)
    pfm_ok = np.array_equal(decode_pfm(encode_pfm(grid)), grid)
    model = DepthModel(SMALL)
    blob = encode_checkpoint(to_checkpoint(model, AdamState(), 0))
    ckpt_ok = encode_checkpoint(decode_checkpoint(blob)) == blob
    return pfm_ok and ckpt_ok, f"pfm {'ok' if pfm_ok else 'MISMATCH'}, checkpoint {'ok' if ckpt_ok else 'MISMATCH'}"


CHECKS: dict[str, Callable[[], tuple[bool, str]]] = {
    "zero-init identity": _zero_init_identity,
    "sampling maps": _sampling_maps,
    "ecc invariance": _ecc_invariance,
    "loss gradient": _loss_gradient,
    "delta bracketing": _metrics_bracket,
    "cka self-similarity": _cka_self,
    "format round-trips": _formats_roundtrip,
}


def run_all() -> Iterator[tuple[str, bool, str]]:
    for name, check in CHECKS.items():
        try:
            ok, detail = check()
        except Exception as exc:  # a crashing check is reported, not raised
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        yield name, ok, detail
