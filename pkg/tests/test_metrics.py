"""Depth metrics, layer-wise cosine and linear CKA."""

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import loop_metrics
from panomod.autodiff import rng_stream
from panomod.errors import DimensionError, DomainError
from panomod.metrics import MetricReport, cosine_layerwise, depth_metrics, drift_report, linear_cka


class TestDepthMetrics:
    def test_loop_oracle(self, rng):
        gt = rng.uniform(0.5, 8.0, size=(1, 1, 8, 16))
        pred = gt * rng.uniform(0.6, 1.6, size=gt.shape)
        ours = depth_metrics(pred, gt).to_dict()
        for k, v in loop_metrics(pred, gt).items():
            assert abs(ours[k] - v) < 1e-10, k

    def test_perfect_prediction(self, rng):
        gt = rng.uniform(1, 5, size=(1, 1, 4, 8))
        r = depth_metrics(gt, gt)
        assert (r.abs_rel, r.sq_rel, r.rmse) == (0.0, 0.0, 0.0)
        assert r.delta1 == r.delta2 == r.delta3 == 100.0

    def test_delta_bracketing(self):
        gt = np.full((1, 1, 2, 2), 2.0)
        # ratio 1.26 is outside delta1 but inside delta2
        r = depth_metrics(gt * 1.26, gt)
        assert r.delta1 == 0.0 and r.delta2 == 100.0 and r.delta3 == 100.0

    def test_hand_values(self):
        gt = np.array([1.0, 2.0, 4.0, 4.0])
        pred = np.array([2.0, 2.0, 4.0, 2.0])
        r = depth_metrics(pred, gt)
        assert r.abs_rel == pytest.approx((1.0 + 0.5) / 4)
        assert r.sq_rel == pytest.approx((1.0 + 1.0) / 4)
        assert r.rmse == pytest.approx(np.sqrt(5.0 / 4))
        assert r.delta1 == 50.0

    @pytest.mark.parametrize("c", [0.3, 2.0, 7.5])
    def test_median_scaling_removes_global_scale(self, rng, c):
        gt = rng.uniform(1, 5, size=(1, 1, 4, 8))
        r = depth_metrics(c * gt, gt, median_scale=True)
        assert r.abs_rel < 1e-14 and r.rmse < 1e-13 and r.median_scaled

    def test_mask_selects_pixels(self, rng):
        gt = rng.uniform(1, 5, size=(1, 1, 4, 8))
        pred = gt.copy()
        mask = np.ones(gt.shape, bool)
        mask[..., 0] = False
        pred[..., 0] = 100.0
        r = depth_metrics(pred, gt, mask)
        assert r.rmse == 0.0 and r.pixel_count == 28

    def test_empty_mask(self):
        with pytest.raises(DomainError):
            depth_metrics(np.ones(4), np.ones(4), np.zeros(4, bool))

    def test_non_positive_gt(self):
        with pytest.raises(DomainError):
            depth_metrics(np.ones(4), np.array([1.0, 0.0, 1.0, 1.0]))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            depth_metrics(np.ones(4), np.ones(5))

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_deltas_monotone(self, seed):
        rng = rng_stream(seed)
        gt = rng.uniform(0.5, 10, size=64)
        pred = gt * np.exp(rng.normal(0, 0.5, size=64))
        r = depth_metrics(pred, gt)
        assert 0 <= r.delta1 <= r.delta2 <= r.delta3 <= 100
        assert r.abs_rel >= 0 and r.sq_rel >= 0 and r.rmse >= 0

    def test_average(self):
        a = MetricReport(0.1, 0.2, 0.3, 90.0, 95.0, 99.0, 10)
        b = MetricReport(0.3, 0.4, 0.5, 80.0, 85.0, 89.0, 30)
        m = MetricReport.average([a, b])
        assert m.abs_rel == pytest.approx(0.2) and m.delta1 == pytest.approx(85.0)
        assert m.pixel_count == 40

    def test_average_empty(self):
        with pytest.raises(DomainError):
            MetricReport.average([])


class TestCosine:
    def test_reference_values(self, rng):
        a = rng.normal(size=(16, 4))
        got = cosine_layerwise([a, a, a], [a, -a, 3 * a])
        np.testing.assert_allclose(got, [1.0, -1.0, 1.0], atol=1e-12)

    def test_orthogonal(self):
        assert cosine_layerwise([np.array([1.0, 0.0])], [np.array([0.0, 2.0])]) == [0.0]

    def test_zero_norm_warns(self):
        with pytest.warns(RuntimeWarning):
            assert cosine_layerwise([np.zeros(3)], [np.ones(3)]) == [0.0]

    def test_layer_count_mismatch(self):
        with pytest.raises(DimensionError):
            cosine_layerwise([np.ones(3)], [np.ones(3), np.ones(3)])


class TestCka:
    def test_self_similarity(self, rng):
        x = rng.normal(size=(32, 6))
        assert linear_cka(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_invariance(self, rng):
        x = rng.normal(size=(40, 8))
        q, _ = np.linalg.qr(rng.normal(size=(8, 8)))
        assert abs(linear_cka(x, x @ q) - 1.0) < 1e-8

    def test_isotropic_scaling(self, rng):
        x, y = rng.normal(size=(2, 30, 5))
        assert linear_cka(x, 4.0 * y) == pytest.approx(linear_cka(x, y), rel=1e-12)

    def test_symmetric(self, rng):
        x, y = rng.normal(size=(30, 5)), rng.normal(size=(30, 7))
        assert linear_cka(x, y) == pytest.approx(linear_cka(y, x), rel=1e-12)

    def test_column_offset_ignored(self, rng):
        x, y = rng.normal(size=(2, 30, 5))
        assert linear_cka(x + 10.0, y) == pytest.approx(linear_cka(x, y), rel=1e-10)

    @pytest.mark.parametrize("seed", range(10))
    def test_independent_features_stay_low(self, seed):
        rng = rng_stream(seed, 99)
        x, y = rng.normal(size=(2, 64, 16))
        assert 0.0 < linear_cka(x, y) < 0.3

    def test_needs_two_samples(self):
        with pytest.raises(DomainError):
            linear_cka(np.ones((1, 3)), np.ones((1, 3)))

    def test_constant_features_give_zero(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert linear_cka(np.ones((5, 2)), np.arange(10.0).reshape(5, 2)) == 0.0

    def test_drift_report(self, rng):
        layers = [rng.normal(size=(16, 4)) for _ in range(3)]
        rep = drift_report(layers, layers)
        assert rep.to_dict()["layers"] == 3
        np.testing.assert_allclose(rep.cosine + rep.cka, 1.0, atol=1e-12)
