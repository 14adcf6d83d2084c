"""Training loop, logging, evaluation and determinism at toy scale."""

import json

import numpy as np
import pytest

from panomod.errors import ConfigError, TrainingError, ValidationError
from panomod.model import DepthModel
from panomod.optim import AdamState
from panomod.scenes import dataset, make_scene, render
from panomod.train import evaluate, load_model, render_all, train, train_step


@pytest.fixture(scope="module")
def specs():
    return dataset(3, 6, 0.5)


def test_zero_lr_step_leaves_params(small_cfg, specs):
    cfg = small_cfg.with_(steps=1, lr=0.0, freeze_backbone=False)
    before = DepthModel(cfg).arrays()
    after = train(cfg, specs[0]).model.arrays()
    assert all(before[n].tobytes() == after[n].tobytes() for n in before)


def test_identical_runs_identical_checkpoints(small_cfg, specs):
    a = train(small_cfg, *specs)
    b = train(small_cfg, *specs)
    assert a.checkpoint == b.checkpoint and a.history == b.history


def test_seed_changes_checkpoint(small_cfg, specs):
    assert train(small_cfg, specs[0]).checkpoint != train(small_cfg.with_(seed=1), specs[0]).checkpoint


def test_log_and_checkpoint_written(small_cfg, specs, tmp_path):
    res = train(small_cfg.with_(eval_every=2, steps=4), *specs, out_dir=tmp_path)
    lines = [json.loads(l) for l in (tmp_path / "train_log.jsonl").read_text().splitlines()]
    steps = [l for l in lines if "step" in l and "total" in l]
    assert [l["step"] for l in steps] == [1, 2, 3, 4]
    assert set(steps[0]) == {"step", "silog", "grad", "ecc", "total"}
    assert sum("eval" in l for l in lines) == 2 and len(res.evals) == 2
    assert (tmp_path / "model.ckpt").read_bytes() == res.checkpoint
    x = render(make_scene(0), *small_cfg.erp)[0]
    assert load_model(tmp_path / "model.ckpt").predict(x).tobytes() == res.model.predict(x).tobytes()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts(small_cfg):
    model = DepthModel(small_cfg)
    model.params["dec.conv2.bias"].data[:] = np.nan
    rgb, depth = render(make_scene(1), *small_cfg.erp)
    with pytest.raises(TrainingError, match="step 7"):
        train_step(model, rgb, depth, AdamState(), 7)


def test_empty_training_set(small_cfg):
    with pytest.raises(ValidationError):
        train(small_cfg, [])


class TestEvaluate:
    def test_repeatable(self, small_cfg, specs):
        model = DepthModel(small_cfg)
        data = render_all(specs[1], small_cfg)
        assert evaluate(model, data).to_dict() == evaluate(model, data).to_dict()

    def test_gt_as_prediction(self, small_cfg, specs):
        res = evaluate(DepthModel(small_cfg), render_all(specs[1], small_cfg), gt_as_prediction=True)
        assert res.mean.delta1 == 100.0 and res.mean.abs_rel == 0.0 and res.ecc == 0.0

    def test_per_image_and_mean(self, small_cfg, specs):
        res = evaluate(DepthModel(small_cfg), render_all(specs[1], small_cfg))
        assert len(res.per_image) == 3 and res.mean.median_scaled
        assert res.mean.rmse == pytest.approx(np.mean([r.rmse for r in res.per_image]))

    def test_resolution_mismatch(self, small_cfg):
        data = [render(make_scene(0), 32, 64)]
        with pytest.raises(ConfigError):
            evaluate(DepthModel(small_cfg), data)

    def test_empty(self, small_cfg):
        with pytest.raises(ValidationError):
            evaluate(DepthModel(small_cfg), [])
