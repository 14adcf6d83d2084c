"""Tensor arithmetic, reductions, backward pass and gradient checking."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gradcases import CASES, run_case
from oracles import loop_moments
from panomod import autodiff as ad
from panomod.autodiff import Tensor
from panomod.errors import ContractError, DimensionError, DomainError

finite = st.floats(-1e3, 1e3, allow_nan=False, width=64)


class TestElementwise:
    def test_mul_values(self):
        out = ad.elementwise("mul", Tensor([2.0, 3.0]), Tensor([4.0, 5.0]))
        np.testing.assert_array_equal(out.data, [8.0, 15.0])

    def test_add_zero_is_identity(self, rng):
        x = rng.normal(size=(2, 3, 4, 4))
        np.testing.assert_array_equal(ad.add(Tensor(x), 0).data, x)

    def test_product_rule(self):
        x = Tensor([2.0, 3.0], requires_grad=True)
        y = Tensor([4.0, 5.0], requires_grad=True)
        grads = ad.backward((x * y).sum())
        np.testing.assert_array_equal(grads[x], [4.0, 5.0])
        np.testing.assert_array_equal(grads[y], [2.0, 3.0])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4,\)"):
            ad.elementwise("add", Tensor(np.zeros((2, 3))), Tensor(np.zeros(4)))

    def test_unknown_kind(self):
        with pytest.raises(DomainError):
            ad.elementwise("pow", Tensor([1.0]), Tensor([1.0]))

    def test_scalar_keeps_float32(self):
        x = Tensor(np.ones(3, dtype=np.float32))
        assert (x * 2.5 + 1).dtype == np.float32

    def test_broadcast_gradient_is_reduced(self, rng):
        a = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(3, 1)), requires_grad=True)
        grads = ad.backward((a * b).sum())
        np.testing.assert_allclose(grads[b], a.data.sum(axis=(0, 2))[:, None], rtol=1e-12)

    @given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (3, 4), elements=finite))
    @settings(max_examples=50, deadline=None)
    def test_add_commutes_exactly(self, a, b):
        np.testing.assert_array_equal(ad.add(Tensor(a), Tensor(b)).data, ad.add(Tensor(b), Tensor(a)).data)


class TestMoments:
    def test_constant_grid(self):
        mu, sd = ad.reduce_moments(np.full((1, 2, 3, 3), 5.0), "spatial", 1e-6)
        np.testing.assert_array_equal(mu.data, 5.0)
        np.testing.assert_allclose(sd.data, np.sqrt(1e-6), rtol=1e-12)

    def test_two_point_variance(self):
        mu, sd = ad.reduce_moments(np.array([1.0, 3.0]).reshape(1, 1, 1, 2), "spatial", 0.0)
        assert mu.item() == 2.0 and sd.item() == 1.0

    @pytest.mark.parametrize("axes", ["spatial", "full"])
    def test_loop_oracle(self, rng, axes):
        x = rng.normal(size=(6, 2, 4, 4))
        mu, sd = ad.reduce_moments(x, axes, 1e-6)
        for b in range(6):
            if axes == "full":
                ref = loop_moments(x[b], 1e-6)
                assert abs(mu.data[b, 0, 0, 0] - ref[0]) < 1e-12
                assert abs(sd.data[b, 0, 0, 0] - ref[1]) < 1e-12
            else:
                for c in range(2):
                    ref = loop_moments(x[b, c], 1e-6)
                    assert abs(mu.data[b, c, 0, 0] - ref[0]) < 1e-12
                    assert abs(sd.data[b, c, 0, 0] - ref[1]) < 1e-12

    def test_empty_extent(self):
        with pytest.raises(DomainError):
            ad.reduce_moments(np.zeros((1, 1, 0, 3)), "spatial")

    def test_bad_mode(self):
        with pytest.raises(DomainError):
            ad.reduce_moments(np.zeros((1, 1, 2, 2)), "channel")


class TestLayerNorm:
    def test_fixed_point(self, rng):
        x = rng.normal(size=(1, 8, 3, 3))
        x = (x - x.mean(axis=1, keepdims=True)) / x.std(axis=1, keepdims=True)
        np.testing.assert_allclose(ad.layernorm_noaffine(Tensor(x)).data, x, atol=1e-6)

    def test_constant_over_channels_gives_zero(self):
        out = ad.layernorm_noaffine(Tensor(np.full((1, 4, 2, 2), 3.0)))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_no_channels(self):
        with pytest.raises(DimensionError):
            ad.layernorm_noaffine(Tensor(np.zeros((1, 0, 2, 2))))


class TestBackward:
    def test_sum_gives_ones(self, rng):
        x = Tensor(rng.normal(size=(2, 3, 5)), requires_grad=True)
        np.testing.assert_array_equal(ad.backward(x.sum())[x], np.ones((2, 3, 5)))

    def test_quadratic(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        np.testing.assert_array_equal(ad.backward((x * x).sum())[x], [2.0, 4.0])

    def test_non_scalar_root(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            ad.backward(x * 2)

    def test_shared_subexpression_visited_once(self):
        x = Tensor([3.0], requires_grad=True)
        y = x * x
        z = y + y + y  # y has three consumers
        np.testing.assert_array_equal(ad.backward(z.sum())[x], [18.0])

    def test_leaf_gradients_accumulate(self):
        x = Tensor([1.0, 1.0], requires_grad=True)
        ad.backward((x * 3).sum())
        ad.backward((x * 4).sum())
        np.testing.assert_array_equal(x.grad, [7.0, 7.0])

    def test_deep_chain_has_no_recursion_limit(self):
        x = Tensor([1.0], requires_grad=True)
        y = x
        for _ in range(5000):
            y = y + 0.0
        np.testing.assert_array_equal(ad.backward(y.sum())[x], [1.0])

    def test_only_requested_leaves_reported(self):
        x = Tensor([1.0], requires_grad=True)
        c = Tensor([2.0])
        assert set(ad.backward((x * c).sum())) == {x}

    def test_deterministic(self, rng):
        fn, arrays = CASES["plain_block"](rng)
        first = ad.gradcheck(fn, [Tensor(a) for a in arrays])
        again = ad.gradcheck(fn, [Tensor(a) for a in arrays])
        assert first == again


@pytest.mark.parametrize("name", sorted(CASES))
def test_finite_differences_64bit(name):
    assert run_case(name, seed=0) < 1e-6


@pytest.mark.parametrize("name", ["layernorm_noaffine", "softmax", "conv2d", "modulated_block", "total_loss"])
def test_finite_differences_32bit(name):
    assert run_case(name, seed=0, dtype=np.float32) < 1e-4


class TestHelpers:
    def test_feature_grid_rejects_nan(self):
        with pytest.raises(DomainError):
            ad.feature_grid(np.full((1, 1, 2, 2), np.nan))

    def test_feature_grid_unchecked_allows_nan(self):
        assert np.isnan(ad.feature_grid(np.full((1, 1, 2, 2), np.nan), checked=False)).all()

    def test_feature_grid_read_only(self):
        g = ad.feature_grid(np.zeros((1, 1, 2, 2)))
        with pytest.raises(ValueError):
            g[0, 0, 0, 0] = 1.0

    def test_feature_grid_rank(self):
        with pytest.raises(DimensionError):
            ad.feature_grid(np.zeros((2, 2)))

    def test_rng_stream_reproducible(self):
        a = ad.rng_stream(42, 1, 2).normal(size=100)
        b = ad.rng_stream(42, 1, 2).normal(size=100)
        c = ad.rng_stream(42, 1, 3).normal(size=100)
        assert np.array_equal(a, b) and not np.array_equal(a, c)

    def test_relative_error_floor(self):
        assert ad.relative_error(np.zeros(3), np.zeros(3)) == 0.0

    def test_numerical_gradient_restores_input(self, rng):
        x = rng.normal(size=5)
        before = x.copy()
        ad.numerical_gradient(lambda: float(np.sum(x**2)), x)
        np.testing.assert_array_equal(x, before)

    def test_split_requires_divisor(self):
        with pytest.raises(DimensionError):
            ad.split(Tensor(np.zeros((1, 5, 2, 2))), 2, axis=1)

    def test_conv_channel_mismatch(self):
        with pytest.raises(DimensionError):
            ad.conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 4, 3, 3))))

    def test_pad_erp_wraps_longitude(self):
        x = np.arange(8.0).reshape(1, 1, 2, 4)
        out = ad.pad_erp(Tensor(x), 1).data
        np.testing.assert_array_equal(out[0, 0, 1:-1, 0], x[0, 0, :, -1])
        np.testing.assert_array_equal(out[0, 0, 1:-1, -1], x[0, 0, :, 0])
        np.testing.assert_array_equal(out[0, 0, 0], 0.0)
