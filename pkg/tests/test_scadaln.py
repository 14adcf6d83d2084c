"""Modulation generation and the modulated transformer block."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcases import CASES
from oracles import plain_block_reference
from panomod import autodiff as ad
from panomod.autodiff import Tensor
from panomod.errors import DimensionError
from panomod.scadaln import (
    MOD_GROUPS,
    BlockParams,
    ModNetParams,
    ModulationParams,
    gen_modulation,
    grid_to_tokens,
    modulate,
    modulated_block,
    plain_block,
    tokens_to_grid,
)

C, H, W = 8, 3, 4


@pytest.fixture
def block(rng):
    return BlockParams.init(C, 2, rng)


def _mods(rng, scale=0.5, **fixed):
    arrays = {k: rng.normal(0, scale, size=(1, C, H, W)) for k in MOD_GROUPS}
    for k, v in fixed.items():
        arrays[k] = np.full((1, C, H, W), float(v))
    return ModulationParams(**{k: Tensor(v) for k, v in arrays.items()})


def _weights(bp):
    return {k: getattr(bp, k).data for k in ("wqkv", "bqkv", "wo", "bo", "w1", "b1", "w2", "b2")}


class TestGenModulation:
    def test_zero_init_gives_zero_groups(self, rng):
        p = ModNetParams.init(C, rng)
        mods = gen_modulation(rng.normal(size=(1, C, H, W)) * 10, p)
        for g in mods.groups():
            assert g.shape == (1, C, H, W)
            assert not g.data.any()

    def test_zero_guidance_gives_bias(self, rng):
        p = ModNetParams.init(C, rng)
        p.pw_weight.data[:] = rng.normal(size=p.pw_weight.shape)
        p.pw_bias.data[:] = np.arange(6 * C)
        mods = gen_modulation(np.zeros((1, C, H, W)), p)
        for k, g in enumerate(mods.groups()):
            expected = np.arange(k * C, (k + 1) * C)[None, :, None, None]
            np.testing.assert_array_equal(g.data, np.broadcast_to(expected, g.shape))

    def test_group_order(self, rng):
        # bias slot k*C..(k+1)*C lands in the k-th named group
        p = ModNetParams.init(C, rng)
        p.pw_bias.data[:] = np.repeat(np.arange(6.0), C)
        mods = gen_modulation(np.zeros((1, C, H, W)), p)
        for k, name in enumerate(MOD_GROUPS):
            assert (getattr(mods, name).data == k).all()

    def test_per_pixel_footprint(self, rng):
        p = ModNetParams.init(C, rng)
        p.pw_weight.data[:] = rng.normal(size=p.pw_weight.shape)
        f = rng.normal(size=(1, C, 6, 8))
        base = gen_modulation(f, p)
        f2 = f.copy()
        f2[0, :, 3, 4] += 1.0
        moved = gen_modulation(f2, p)
        for a, b in zip(base.groups(), moved.groups()):
            changed = np.abs(a.data - b.data).max(axis=(0, 1)) > 0
            rows, cols = np.nonzero(changed)
            assert rows.min() >= 2 and rows.max() <= 4 and cols.min() >= 3 and cols.max() <= 5

    def test_channel_mismatch(self, rng):
        with pytest.raises(DimensionError):
            gen_modulation(np.zeros((1, C + 1, H, W)), ModNetParams.init(C, rng))


class TestModulate:
    def test_zero_is_identity(self, rng):
        f = rng.normal(size=(1, C, H, W))
        z = np.zeros_like(f)
        np.testing.assert_array_equal(modulate(f, z, z).data, f)

    def test_gamma_minus_one_gives_beta(self, rng):
        f, beta = rng.normal(size=(2, 1, C, H, W))
        np.testing.assert_array_equal(modulate(f, beta, -np.ones_like(f)).data, beta)

    def test_loop_oracle(self, rng):
        f, beta, gamma = rng.normal(size=(3, 1, 2, 2, 3))
        out = modulate(f, beta, gamma).data
        for idx in np.ndindex(f.shape):
            assert out[idx] == f[idx] * (1.0 + gamma[idx]) + beta[idx]

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            modulate(np.zeros((1, 2, 3, 3)), np.zeros((1, 2, 3, 3)), np.zeros((1, 2, 3, 1)))


class TestBlock:
    def test_zero_modulation_is_identity(self, rng, block):
        x = rng.normal(size=(1, C, H, W))
        out = modulated_block(x, ModulationParams.zeros((1, C, H, W)), block)
        assert out.data.tobytes() == x.tobytes()

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=15, deadline=None)
    def test_fresh_modnet_identity(self, seed):
        rng = ad.rng_stream(seed)
        x = rng.normal(0, 3, size=(1, C, H, W))
        mods = gen_modulation(rng.normal(0, 3, size=(1, C, H, W)), ModNetParams.init(C, rng))
        out = modulated_block(x, mods, BlockParams.init(C, 4, rng))
        assert np.array_equal(out.data, x)

    def test_unit_gates_match_plain_reference(self, rng, block):
        x = rng.normal(size=(1, C, H, W))
        mods = _mods(rng, g_attn=1, g_mlp=1, beta_attn=0, gamma_attn=0, beta_mlp=0, gamma_mlp=0)
        out = modulated_block(x, mods, block).data
        tokens = x.reshape(C, H * W).T
        ref = plain_block_reference(tokens, _weights(block), heads=2)
        np.testing.assert_allclose(grid_to_tokens(Tensor(out)).data, ref, atol=1e-10)
        np.testing.assert_allclose(plain_block(x, block).data, out, atol=1e-12)

    @pytest.mark.parametrize("gate,fixed", [("g_attn", {"g_mlp": 0.0}), ("g_mlp", {})])
    def test_affine_in_residual_gate(self, rng, block, gate, fixed):
        # the MLP branch reads LN(h), so g_attn is affine only while g_mlp = 0
        x = rng.normal(size=(1, C, H, W))
        base = _mods(rng, **fixed)

        def run(g):
            m = ModulationParams(*base.groups())
            setattr(m, gate, Tensor(np.full((1, C, H, W), g)))
            return modulated_block(x, m, block).data

        np.testing.assert_allclose(run(0.5), 0.5 * (run(0.0) + run(1.0)), atol=1e-12)

    def test_token_permutation_equivariance(self, rng, block):
        x = rng.normal(size=(1, C, H, W))
        mods = _mods(rng)
        perm = rng.permutation(H * W)
        inv = np.argsort(perm)

        def permute(t, p):
            tok = grid_to_tokens(Tensor(t)).data[p]
            return tokens_to_grid(Tensor(tok), H, W).data

        out = modulated_block(x, mods, block).data
        permuted_mods = ModulationParams(*(Tensor(permute(g.data, perm)) for g in mods.groups()))
        # a (1, N) grid keeps the permuted token order intact through the block
        out_p = modulated_block(permute(x, perm).reshape(1, C, 1, H * W),
                                ModulationParams(*(Tensor(g.data.reshape(1, C, 1, H * W))
                                                   for g in permuted_mods.groups())), block).data
        back = grid_to_tokens(Tensor(out_p)).data[inv]
        np.testing.assert_allclose(back, grid_to_tokens(Tensor(out)).data, atol=1e-10)

    def test_heads_must_divide_channels(self, rng):
        with pytest.raises(DimensionError):
            BlockParams.init(6, 4, rng)

    def test_mods_shape_checked(self, rng, block):
        with pytest.raises(DimensionError):
            modulated_block(np.zeros((1, C, H, W)), ModulationParams.zeros((1, C, H, W + 1)), block)

    def test_token_grid_round_trip(self, rng):
        x = rng.normal(size=(1, C, H, W))
        np.testing.assert_array_equal(tokens_to_grid(grid_to_tokens(Tensor(x)), H, W).data, x)

    def test_gradients_32bit(self, rng):
        fn, arrays = CASES["modulated_block"](rng)
        errs = ad.gradcheck(fn, [Tensor(a.astype(np.float32)) for a in arrays])
        assert max(errs) < 1e-4
