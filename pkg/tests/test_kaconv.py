"""KA convolution layer: wiring identities, loop oracle, gradients, cost."""

import math

import numpy as np
import pytest

from kaconv.errors import ConfigError, ContractError, DimensionError
from kaconv.kaconv import (
    KAConvParams,
    convkan_bwd,
    convkan_fwd,
    kaconv_flops,
    kaconv_layer_bwd,
    kaconv_layer_fwd,
    kaconv_reference_oracle,
    standard_conv_flops,
)
from reference import numerical_grad, rel_err

GRAD_TOL = 1e-6


def _params(c_in=2, c_out=4, k=3, stride=1, padding=None, seed=0, **kw):
    return KAConvParams.init(c_in, c_out, k=k, stride=stride, padding=padding,
                             rng=np.random.default_rng(seed), **kw)


def _silu(v):
    return v / (1.0 + math.exp(-v)) if v >= 0 else v * math.exp(v) / (1.0 + math.exp(v))


def _convkan_loop(x, p):
    """Test-local patch-by-patch evaluation of the two-branch stage."""
    from kaconv.kaconv import _act_scalar

    n, c, h, w = x.shape
    k, q, s, pad = p.k, p.q, p.stride, p.padding
    ho, wo = p.conv_spec.out_hw(h, w)
    wb = p.w_base.reshape(c, q, k, k)
    out = np.zeros((n, c * q, ho, wo))
    for ni in range(n):
        for ci in range(c):
            for qi in range(q):
                for oi in range(ho):
                    for oj in range(wo):
                        sa = sb = se = 0.0
                        for ki in range(k):
                            for kj in range(k):
                                ii, jj = oi * s - pad + ki, oj * s - pad + kj
                                v = x[ni, ci, ii, jj] if 0 <= ii < h and 0 <= jj < w else 0.0
                                ta = wb[ci, qi, ki, kj] * _silu(v)
                                tb = p.w_learn[ci, qi, ki * k + kj] * _act_scalar(v, p.act, ci)
                                sa += ta
                                sb += tb
                                se += ta * tb
                        out[ni, ci * q + qi, oi, oj] = \
                            se if p.product_mode == "per_element" else sa * sb
    return out


class TestConvkan:
    def test_q_count(self):
        assert _params(k=3).q == 19
        assert _params(k=1).q == 3
        assert _params(k=5).q == 51

    def test_product_wiring_via_unit_basis_branch(self, rng):
        # zero basis weights + shift 1.0 makes branch A the constant 1,
        # so the product must return branch B untouched
        p = _params()
        p.w_base[:] = 0.0
        x = rng.standard_normal((2, 2, 6, 6))
        y, cache = convkan_fwd(x, p, branch_a_shift=1.0)
        np.testing.assert_array_equal(y, cache.branch_b)

    def test_zero_input_zero_output(self, rng):
        for mode in ("post_sum", "per_element"):
            p = _params(product_mode=mode, seed=3)
            y, _ = convkan_fwd(np.zeros((1, 2, 5, 5)), p)
            assert np.all(y == 0.0)

    def test_matches_patch_loop(self, rng):
        p = _params(c_in=2, c_out=4)
        x = rng.standard_normal((1, 2, 5, 5))
        y, _ = convkan_fwd(x, p)
        assert y.shape == (1, 38, 5, 5)
        assert np.max(np.abs(y - _convkan_loop(x, p))) <= 1e-10

    def test_matches_patch_loop_per_element(self, rng):
        p = _params(c_in=2, c_out=4, product_mode="per_element", seed=5)
        x = rng.standard_normal((1, 2, 5, 5))
        y, _ = convkan_fwd(x, p)
        assert np.max(np.abs(y - _convkan_loop(x, p))) <= 1e-10

    def test_channel_mismatch(self, rng):
        with pytest.raises(DimensionError):
            convkan_fwd(rng.standard_normal((1, 3, 5, 5)), _params(c_in=2))

    def test_shift_rejected_per_element(self, rng):
        p = _params(product_mode="per_element")
        with pytest.raises(ConfigError):
            convkan_fwd(rng.standard_normal((1, 2, 5, 5)), p, branch_a_shift=1.0)


class TestKAConvLayerForward:
    def test_shape_law(self, rng):
        p = _params(c_in=8, c_out=32, k=3, stride=1, padding=1, seed=1)
        x = rng.standard_normal((2, 8, 16, 16))
        z, _ = convkan_fwd(x, p)
        assert z.shape == (2, 152, 16, 16)  # 8 * (2*9+1)
        y, _ = kaconv_layer_fwd(x, p, train=False)
        assert y.shape == (2, 32, 16, 16)

    def test_stride_two_halves_extents(self, rng):
        p = _params(c_in=2, c_out=4, stride=2, padding=1, seed=2)
        y, _ = kaconv_layer_fwd(rng.standard_normal((1, 2, 8, 8)), p, train=False)
        assert y.shape == (1, 4, 4, 4)

    def test_zero_outer_gives_bias_only(self, rng):
        p = _params(seed=4)
        p.w_outer[:] = 0.0
        p.b_mix[:] = rng.standard_normal(4)
        y, _ = kaconv_layer_fwd(rng.standard_normal((1, 2, 5, 5)), p, train=False)
        np.testing.assert_array_equal(y, np.broadcast_to(
            p.b_mix[None, :, None, None], y.shape))

    def test_single_patch_hand_check(self):
        # all conv weights 1, identity activation, eval norm with unit
        # stats: each of the Q terms is silu-sum times plain sum
        p = _params(c_in=1, c_out=1, k=3, padding=0, seed=6)
        for name, arr in p.named_params().items():
            if name.startswith("w"):
                arr[:] = 1.0
        p.b_mix[:] = 0.0
        x = np.arange(-4.0, 5.0).reshape(1, 1, 3, 3) / 4.0
        y, _ = kaconv_layer_fwd(x, p, train=False)

        vals = x.reshape(-1)
        a = sum(_silu(v) for v in vals)
        b = sum(vals)  # identity activation, unit weights
        z = a * b
        zn = _silu((z - 0.0) / math.sqrt(1.0 + 1e-5))  # unit running stats
        expected = zn * p.q * p.q  # outer sums Q equal terms, mix sums again
        assert y.shape == (1, 1, 1, 1)
        assert y[0, 0, 0, 0] == pytest.approx(expected, rel=1e-12)

    def test_train_mode_updates_running_stats(self, rng):
        p = _params(seed=7)
        before = p.running_mean.copy()
        kaconv_layer_fwd(rng.standard_normal((2, 2, 5, 5)), p, train=True)
        assert not np.array_equal(p.running_mean, before)


class TestOracleEquivalence:
    @pytest.mark.parametrize("outer_mode", ["collapse", "wide"])
    @pytest.mark.parametrize("product_mode", ["post_sum", "per_element"])
    def test_modes_match_oracle(self, rng, outer_mode, product_mode):
        p = _params(c_in=2, c_out=3, seed=8, outer_mode=outer_mode,
                    product_mode=product_mode)
        p.running_mean[:] = rng.standard_normal(p.c_in * p.q) * 0.1
        p.running_var[:] = rng.random(p.c_in * p.q) + 0.5
        x = rng.standard_normal((1, 2, 5, 5))
        y, _ = kaconv_layer_fwd(x, p, train=False)
        ref = kaconv_reference_oracle(x, p)
        assert np.max(np.abs(y - ref)) <= 1e-10

    @pytest.mark.parametrize("act_family", ["prelu", "bspline"])
    def test_other_activation_families(self, rng, act_family):
        p = _params(c_in=2, c_out=3, seed=9, act_family=act_family)
        x = rng.standard_normal((1, 2, 4, 4))
        y, _ = kaconv_layer_fwd(x, p, train=False)
        ref = kaconv_reference_oracle(x, p)
        assert np.max(np.abs(y - ref)) <= 1e-10

    def test_zeros_give_bias_only_both_paths(self):
        p = _params(seed=10)
        x = np.zeros((1, 2, 4, 4))
        y, _ = kaconv_layer_fwd(x, p, train=False)
        ref = kaconv_reference_oracle(x, p)
        np.testing.assert_allclose(y, ref, atol=1e-12)
        # convkan of zeros is zero, so spatial variation must be nil
        assert np.ptp(y) <= 1e-12


def _layer_loss(x, p, gy, train=True):
    def loss():
        return float(np.sum(kaconv_layer_fwd(x, p, train=train)[0] * gy))
    return loss


# fd step for losses through the whole layer: the five-stage composition
# amplifies both truncation (larger third derivatives) and roundoff
# (larger summed magnitudes), and this step sits at the error minimum
FD_H = 3e-5


class TestKAConvLayerBackward:
    def test_zero_grad(self, rng):
        p = _params(seed=11)
        x = rng.standard_normal((1, 2, 5, 5))
        y, cache = kaconv_layer_fwd(x, p)
        gx, grads = kaconv_layer_bwd(np.zeros_like(y), cache)
        assert np.all(gx == 0)
        for name, g in grads.by_name.items():
            assert np.all(g == 0), name

    def test_stale_cache_rejected(self, rng):
        p = _params(seed=12)
        y, cache = kaconv_layer_fwd(rng.standard_normal((1, 2, 5, 5)), p)
        with pytest.raises(ContractError):
            kaconv_layer_bwd(np.zeros((1, 4, 3, 3)), cache)

    def test_outer_grad_isolates_to_grouped_conv_bwd(self, rng):
        from kaconv.activations import silu
        from kaconv.tensor_ops import ConvSpec, conv2d_grouped_bwd, conv2d_grouped_fwd

        p = _params(seed=13)
        x = rng.standard_normal((2, 2, 5, 5))
        y, cache = kaconv_layer_fwd(x, p, train=False)
        gy = rng.standard_normal(y.shape)
        _, grads = kaconv_layer_bwd(gy, cache)

        grad_o, _, _ = conv2d_grouped_bwd(gy, cache.mix_cache)
        a = silu(cache.normed)
        _, c2 = conv2d_grouped_fwd(a, p.w_outer, None, ConvSpec(1, groups=p.c_in))
        _, expected, _ = conv2d_grouped_bwd(grad_o, c2)
        np.testing.assert_allclose(grads["w_outer"], expected, atol=1e-12)

    def test_finite_differences_all_param_groups(self, rng):
        p = _params(c_in=2, c_out=3, seed=14)
        x = rng.standard_normal((1, 2, 5, 5))
        y, cache = kaconv_layer_fwd(x, p, train=True)
        gy = rng.standard_normal(y.shape)
        gx, grads = kaconv_layer_bwd(gy, cache)
        loss = _layer_loss(x, p, gy, train=True)

        assert rel_err(gx, numerical_grad(loss, x, h=FD_H)) <= GRAD_TOL
        for name, arr in p.named_params().items():
            assert rel_err(grads[name], numerical_grad(loss, arr, h=FD_H)) <= GRAD_TOL, name

    @pytest.mark.parametrize("outer_mode,product_mode", [
        ("wide", "post_sum"), ("collapse", "per_element")])
    def test_finite_differences_other_modes(self, rng, outer_mode, product_mode):
        p = _params(c_in=2, c_out=3, seed=15, outer_mode=outer_mode,
                    product_mode=product_mode)
        x = rng.standard_normal((1, 2, 4, 4))
        y, cache = kaconv_layer_fwd(x, p, train=True)
        gy = rng.standard_normal(y.shape)
        gx, grads = kaconv_layer_bwd(gy, cache)
        loss = _layer_loss(x, p, gy, train=True)

        assert rel_err(gx, numerical_grad(loss, x, h=FD_H)) <= GRAD_TOL
        for name, arr in p.named_params().items():
            assert rel_err(grads[name], numerical_grad(loss, arr, h=FD_H)) <= GRAD_TOL, name

    def test_finite_differences_eval_norm(self, rng):
        p = _params(c_in=2, c_out=3, seed=16)
        p.running_mean[:] = rng.standard_normal(p.c_in * p.q) * 0.1
        p.running_var[:] = rng.random(p.c_in * p.q) + 0.5
        x = rng.standard_normal((1, 2, 4, 4))
        y, cache = kaconv_layer_fwd(x, p, train=False)
        gy = rng.standard_normal(y.shape)
        gx, _ = kaconv_layer_bwd(gy, cache)
        assert rel_err(gx, numerical_grad(_layer_loss(x, p, gy, train=False), x, h=FD_H)) \
            <= GRAD_TOL


class TestCostAccounting:
    def test_reference_shape_macs(self):
        p = _params(c_in=128, c_out=128, k=3, stride=1, padding=1, seed=17)
        f = kaconv_flops(p, 14, 14)
        assert f.out_hw == (14, 14)
        assert f.inner_per_branch == 4_290_048   # 14*14*128*19*9
        assert f.mix == 3_211_264                # 14*14*128*128
        assert f.headline == 4_290_048 + 3_211_264

    def test_cheaper_than_standard_conv(self):
        p = _params(c_in=128, c_out=128, k=3, stride=1, padding=1, seed=18)
        std = standard_conv_flops(128, 128, 3, 14, 14)
        assert std == 28_901_376
        assert kaconv_flops(p, 14, 14).total < std

    def test_k1_degenerate(self):
        p = _params(c_in=8, c_out=8, k=1, padding=0, seed=19)
        f = kaconv_flops(p, 10, 10)
        assert p.q == 3
        assert f.inner_per_branch == 10 * 10 * 8 * 3 * 1

    @pytest.mark.parametrize("k", [1, 3, 5])
    def test_counts_follow_q_formula(self, k):
        c_in, c_out, h = 4, 6, 12
        p = _params(c_in=c_in, c_out=c_out, k=k, seed=20)
        q = 2 * k * k + 1
        assert p.q == q
        # parameters: two patch-weight sets, activation (n=1 grid: two
        # slopes and one offset per channel), norm affine, outer, mix
        expected = (2 * c_in * q * k * k + 3 * c_in + 2 * c_in * q
                    + c_in * q + c_in * c_out + c_out)
        assert p.param_count() == expected
        f = kaconv_flops(p, h, h)
        hw = h * h
        assert f.inner_per_branch == hw * c_in * q * k * k
        assert f.outer == hw * c_in * q
        assert f.mix == hw * c_in * c_out

    def test_param_count_affine_in_q_at_fixed_kernel(self):
        # slope of the count in q, all else fixed, is c_in*(2k^2 + 3)
        c_in, c_out, k = 4, 6, 3
        counts = {}
        for kk in (1, 3, 5):
            pp = _params(c_in=c_in, c_out=c_out, k=kk, seed=21)
            counts[pp.q] = pp.param_count() - 2 * c_in * pp.q * kk * kk
        # after removing the k-dependent patch weights, the remainder is
        # affine in q with slope 3*c_in and intercept 3c + c*c_out + c_out
        qs = sorted(counts)
        d1 = (counts[qs[1]] - counts[qs[0]]) / (qs[1] - qs[0])
        d2 = (counts[qs[2]] - counts[qs[1]]) / (qs[2] - qs[1])
        assert d1 == d2 == 3 * c_in

    def test_wide_mode_costs(self):
        p = _params(c_in=4, c_out=6, seed=22, outer_mode="wide")
        q = p.q
        f = kaconv_flops(p, 8, 8)
        assert f.outer == 64 * 4 * q * q
        assert f.mix == 64 * 4 * q * 6
        assert p.w_outer.shape == (4 * q, q, 1, 1)
        assert p.w_mix.shape == (6, 4 * q, 1, 1)


class TestParamValidation:
    def test_bad_base_shape(self):
        p = _params()
        with pytest.raises(ConfigError):
            KAConvParams(**{**p.__dict__, "w_base": np.zeros((3, 1, 3, 3))})

    def test_bad_outer_mode(self):
        with pytest.raises(ConfigError):
            _params(outer_mode="bogus")

    def test_bad_act_family(self):
        with pytest.raises(ConfigError):
            _params(act_family="fourier")
