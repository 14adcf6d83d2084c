"""Training loop and evaluation for the toy model."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import rng_stream
from .config import ModelConfig
from .errors import ConfigError, TrainingError, ValidationError
from .io import Checkpoint, append_jsonl, decode_checkpoint, encode_checkpoint
from .losses import ecc_loss, total_loss
from .metrics import MetricReport, depth_metrics
from .model import DepthModel
from .optim import AdamState, adam_step
from .scenes import SceneSpec, augment, render

log = logging.getLogger(__name__)


def render_all(specs: list[SceneSpec], cfg: ModelConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    h, w = cfg.erp
    return [render(s, h, w) for s in specs]


@dataclass
class EvalResult:
    mean: MetricReport
    per_image: list[MetricReport]
    ecc: float  # mean val ECC term
    total: float  # mean val total loss

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.to_dict(),
            "per_image": [r.to_dict() for r in self.per_image],
            "ecc": self.ecc,
            "total": self.total,
        }


@dataclass
class TrainResult:
    model: DepthModel
    checkpoint: bytes
    history: list[dict] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)


def to_checkpoint(model: DepthModel, opt: AdamState, step: int) -> Checkpoint:
    tensors = dict(model.arrays())
    for name in model.params:
        if name in opt.m:
            tensors[f"adam.m.{name}"] = opt.m[name]
            tensors[f"adam.v.{name}"] = opt.v[name]
    return Checkpoint(model.cfg, tensors, step=step, adam_step=opt.step)


def from_checkpoint(ckpt: Checkpoint) -> tuple[DepthModel, AdamState]:
    model = DepthModel.from_arrays(ckpt.config, ckpt.tensors)
    opt = AdamState(step=ckpt.adam_step)
    for name in model.params:
        if f"adam.m.{name}" in ckpt.tensors:
            opt.m[name] = ckpt.tensors[f"adam.m.{name}"].copy()
            opt.v[name] = ckpt.tensors[f"adam.v.{name}"].copy()
    return model, opt


def train_step(
    model: DepthModel, rgb: np.ndarray, depth: np.ndarray, opt: AdamState, step: int
) -> tuple[dict, dict[str, np.ndarray]]:
    """Forward, backward and one Adam update.

    Returns the loss breakdown and the gradient table; frozen parameters
    report an all-zero gradient and are skipped by the optimizer.
    """
    cfg = model.cfg
    for p in model.params.values():
        p.grad = None
    gt = ad.Tensor(depth.astype(cfg.dtype))
    pred = model.forward(rgb).depth
    loss, parts = total_loss(pred, gt, None, cfg.loss_weights, cfg.face_size, cfg.ecc_moments)
    if not math.isfinite(parts["total"]):
        raise TrainingError(f"non-finite loss at step {step}: {parts}")
    ad.backward(loss)
    grads = {n: np.zeros_like(p.data) if p.grad is None else p.grad for n, p in model.params.items()}
    adam_step(model.params, {n: g if model.params[n].requires_grad else None for n, g in grads.items()},
              opt, cfg.lr)
    return parts, grads


def evaluate(
    model: DepthModel,
    data: list[tuple[np.ndarray, np.ndarray]],
    modulation: bool = True,
    median_scale: bool = True,
    gt_as_prediction: bool = False,
) -> EvalResult:
    """Median-scaled metrics per image plus their mean, in list order."""
    if not data:
        raise ValidationError("evaluation set is empty")
    cfg = model.cfg
    reports, eccs, totals = [], [], []
    for rgb, depth in data:
        if rgb.shape != (1, 3, *cfg.erp):
            raise ConfigError("erp", f"image shape {rgb.shape} does not match model resolution {cfg.erp}")
        if gt_as_prediction:
            pred = np.array(depth, dtype=np.float64)
        else:
            pred = model.predict(rgb, modulation=modulation)
        gt = depth.astype(cfg.dtype)
        reports.append(depth_metrics(pred[0, 0], depth[0, 0], median_scale=median_scale))
        eccs.append(ecc_loss(pred, gt, cfg.face_size, moments=cfg.ecc_moments).item())
        totals.append(total_loss(pred, gt, None, cfg.loss_weights, cfg.face_size, cfg.ecc_moments)[1]["total"])
    return EvalResult(MetricReport.average(reports), reports, float(np.mean(eccs)), float(np.mean(totals)))


def train(
    cfg: ModelConfig,
    train_specs: list[SceneSpec],
    val_specs: list[SceneSpec] | None = None,
    out_dir=None,
) -> TrainResult:
    """Train from scratch; deterministic given (cfg, specs).

    Writes ``train_log.jsonl`` and ``model.ckpt`` into ``out_dir`` when given.
    """
    if not train_specs:
        raise ValidationError("training set is empty")
    train_data = render_all(train_specs, cfg)
    val_data = render_all(val_specs, cfg) if val_specs else []
    model = DepthModel(cfg)
    opt = AdamState()
    rng = rng_stream(cfg.seed, 2)
    out = Path(out_dir) if out_dir is not None else None
    log_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "train_log.jsonl"
        log_path.write_text("")
    result = TrainResult(model, b"")
    for step in range(1, cfg.steps + 1):
        rgb, depth = train_data[int(rng.integers(len(train_data)))]
        if cfg.augment:
            rgb, depth = augment(rgb, depth, rng)
        parts, _ = train_step(model, rgb, depth, opt, step)
        record = {"step": step, **parts}
        result.history.append(record)
        if log_path is not None:
            append_jsonl(log_path, record)
        if cfg.eval_every and val_data and step % cfg.eval_every == 0:
            ev = evaluate(model, val_data)
            summary = {"step": step, "val_rmse": ev.mean.rmse, "val_abs_rel": ev.mean.abs_rel,
                       "val_delta1": ev.mean.delta1, "val_ecc": ev.ecc}
            result.evals.append(summary)
            log.info("step %d: %s", step, summary)
            if log_path is not None:
                append_jsonl(log_path, {"eval": summary})
    ckpt = to_checkpoint(model, opt, cfg.steps)
    result.checkpoint = encode_checkpoint(ckpt)
    if out is not None:
        (out / "model.ckpt").write_bytes(result.checkpoint)
    return result


def load_model(path) -> DepthModel:
    model, _ = from_checkpoint(decode_checkpoint(Path(path).read_bytes()))
    return model
