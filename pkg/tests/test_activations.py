"""Activation families against closed forms and finite differences."""

import numpy as np
import pytest

from kaconv.activations import (
    BSplineParams,
    GLinearParams,
    PReLUParams,
    bspline_bwd,
    bspline_fwd,
    bspline_scalar,
    glinear_bwd,
    glinear_fwd,
    glinear_scalar,
    prelu_bwd,
    prelu_fwd,
    sigmoid,
    silu,
    silu_bwd,
)
from kaconv.errors import ConfigError, DimensionError
from reference import numerical_grad, rel_err

GRAD_TOL = 1e-6


class TestSiLU:
    def test_zero(self):
        assert silu(0.0) == 0.0

    def test_saturates_to_identity(self):
        assert abs(silu(30.0) - 30.0) <= 1e-9

    def test_no_overflow_far_out(self):
        y = silu(np.array([-1e4, 1e4]))
        assert np.all(np.isfinite(y))
        assert y[0] == 0.0

    def test_sigmoid_symmetry(self, rng):
        x = rng.standard_normal(50) * 5
        np.testing.assert_allclose(sigmoid(x) + sigmoid(-x), 1.0, atol=1e-15)

    def test_derivative_finite_differences(self, rng):
        x = rng.standard_normal(40) * 3
        d = silu_bwd(np.ones_like(x), x)
        h = 1e-5
        fd = (silu(x + h) - silu(x - h)) / (2 * h)
        assert np.max(np.abs(d - fd)) <= 1e-8


def _glp(alphas, beta, grid):
    return GLinearParams(alphas=np.asarray(alphas, float),
                         beta=np.asarray(beta, float),
                         grid=np.asarray(grid, float))


class TestGLinearForward:
    def test_relu_specialization(self):
        p = _glp([[0.0, 1.0]], [0.0], [0.0])
        x = np.array([[[2.0, -3.0, 0.0]]])
        y, _ = glinear_fwd(x, p)
        np.testing.assert_array_equal(y[0, 0], [2.0, 0.0, 0.0])

    def test_two_segment_direct_values(self):
        # line through (0, beta) below the knot, slope 2 above it
        p = _glp([[0.5, 2.0]], [0.1], [0.0])
        x = np.array([[[-1.0, 1.0, 0.0]]])
        y, _ = glinear_fwd(x, p)
        assert y[0, 0, 0] == pytest.approx(-0.4)
        assert y[0, 0, 1] == pytest.approx(2.1)
        assert y[0, 0, 2] == pytest.approx(0.1)

    def test_identity_init_is_identity(self, rng):
        p = GLinearParams.identity(channels=3, grid=(-1.0, 0.5, 2.0))
        x = rng.standard_normal((2, 3, 7)) * 3
        y, _ = glinear_fwd(x, p)
        np.testing.assert_allclose(y, x, atol=1e-12)

    def test_continuity_exact_at_every_knot(self, rng):
        grid = np.sort(rng.standard_normal(4)) * 2
        p = GLinearParams(alphas=rng.standard_normal((3, 5)),
                          beta=rng.standard_normal(3), grid=grid)
        x = np.tile(grid, (1, 3, 1))
        y, _ = glinear_fwd(x, p)  # left-segment evaluation at each knot
        right = p.anchor_values()[:, 1:]  # right segment's value at its start
        assert np.all(np.abs(y[0] - right) == 0.0)

    def test_piecewise_affine_inside_segments(self, rng):
        grid = np.array([-1.0, 0.0, 1.5])
        p = GLinearParams(alphas=rng.standard_normal((1, 4)),
                          beta=rng.standard_normal(1), grid=grid)
        for a in (-2.0, -0.5, 0.7, 2.0):  # one probe per open segment
            x = np.array([[[a, a + 0.1, a + 0.2]]])
            y, _ = glinear_fwd(x, p)
            second_diff = y[0, 0, 0] - 2 * y[0, 0, 1] + y[0, 0, 2]
            assert abs(second_diff) <= 1e-12

    def test_knot_takes_left_slope(self):
        p = _glp([[0.5, 2.0]], [0.0], [0.0])
        _, cache = glinear_fwd(np.array([[[0.0]]]), p)
        gx, _, _ = glinear_bwd(np.ones((1, 1, 1)), cache)
        assert gx[0, 0, 0] == 0.5

    def test_unsorted_grid_rejected(self):
        with pytest.raises(ConfigError):
            _glp([[1.0, 1.0, 1.0]], [0.0], [1.0, -1.0])

    def test_channel_mismatch(self, rng):
        p = GLinearParams.identity(channels=4)
        with pytest.raises(DimensionError):
            glinear_fwd(rng.standard_normal((1, 3, 5)), p)


class TestGLinearBackward:
    def test_zero_grad(self, rng):
        p = GLinearParams.identity(channels=2, grid=(-0.5, 0.5))
        x = rng.standard_normal((2, 2, 6))
        _, cache = glinear_fwd(x, p)
        gx, ga, gb = glinear_bwd(np.zeros((2, 2, 6)), cache)
        assert np.all(gx == 0) and np.all(ga == 0) and np.all(gb == 0)

    def test_locality_below_first_knot(self, rng):
        p = GLinearParams(alphas=rng.standard_normal((2, 4)),
                          beta=rng.standard_normal(2),
                          grid=np.array([0.0, 1.0, 2.0]))
        x = -1.0 - rng.random((3, 2, 5))  # all in the first segment
        _, cache = glinear_fwd(x, p)
        _, ga, _ = glinear_bwd(rng.standard_normal(x.shape), cache)
        assert np.all(ga[:, 1:] == 0.0)

    def test_finite_differences_all_params(self, rng):
        grid = np.array([-0.8, 0.3, 1.1])
        alphas = rng.standard_normal((3, 4))
        beta = rng.standard_normal(3)
        x = rng.standard_normal((2, 3, 8)) * 2
        gy = rng.standard_normal(x.shape)

        def loss():
            p = GLinearParams(alphas=alphas, beta=beta, grid=grid)
            return float(np.sum(glinear_fwd(x, p)[0] * gy))

        p = GLinearParams(alphas=alphas, beta=beta, grid=grid)
        _, cache = glinear_fwd(x, p)
        gx, ga, gb = glinear_bwd(gy, cache)
        assert rel_err(gx, numerical_grad(loss, x)) <= GRAD_TOL
        assert rel_err(ga, numerical_grad(loss, alphas)) <= GRAD_TOL
        assert rel_err(gb, numerical_grad(loss, beta)) <= GRAD_TOL

    def test_chained_slope_gradient_reaches_upper_segments(self, rng):
        # with all x above the last knot, lower slopes still get gradient
        # through the telescoped endpoints
        p = GLinearParams(alphas=rng.standard_normal((1, 3)),
                          beta=rng.standard_normal(1),
                          grid=np.array([-1.0, 1.0]))
        x = 2.0 + rng.random((1, 1, 4))
        _, cache = glinear_fwd(x, p)
        gy = np.ones_like(x)
        _, ga, _ = glinear_bwd(gy, cache)
        # each unit of grad flows through the width-2 middle gap
        assert ga[0, 1] == pytest.approx(2.0 * 4)
        # first gap spans 0 to the first knot: width 1, negative direction
        assert ga[0, 0] == pytest.approx(-1.0 * 4)


class TestPReLU:
    def test_unit_slope_is_identity(self, rng):
        p = PReLUParams(slope=np.ones(3))
        x = rng.standard_normal((2, 3, 5))
        y, _ = prelu_fwd(x, p)
        np.testing.assert_array_equal(y, x)

    def test_finite_differences(self, rng):
        slope = rng.random(3) * 0.5
        x = rng.standard_normal((2, 3, 6))
        x[np.abs(x) < 1e-3] += 0.1  # keep away from the kink
        gy = rng.standard_normal(x.shape)
        p = PReLUParams(slope=slope)
        _, cache = prelu_fwd(x, p)
        gx, gs = prelu_bwd(gy, cache)

        def loss():
            return float(np.sum(prelu_fwd(x, PReLUParams(slope=slope))[0] * gy))

        assert rel_err(gx, numerical_grad(loss, x)) <= GRAD_TOL
        assert rel_err(gs, numerical_grad(loss, slope)) <= GRAD_TOL


class TestBSpline:
    def test_partition_of_unity(self):
        p = BSplineParams(coeffs=np.full((1, 11), 3.7))
        x = np.linspace(-3.9, 3.9, 41).reshape(1, 1, -1)
        y, _ = bspline_fwd(x, p)
        np.testing.assert_allclose(y, 3.7, atol=1e-10)

    def test_identity_init_reproduces_line(self, rng):
        p = BSplineParams.identity(channels=2)
        x = rng.uniform(-4, 4, size=(1, 2, 30))
        y, _ = bspline_fwd(x, p)
        np.testing.assert_allclose(y, x, atol=1e-10)

    def test_clamp_beyond_range(self, rng):
        p = BSplineParams(coeffs=rng.standard_normal((1, 11)))
        y_far, cache = bspline_fwd(np.array([[[10.0]]]), p)
        y_edge, _ = bspline_fwd(np.array([[[4.0]]]), p)
        assert y_far[0, 0, 0] == y_edge[0, 0, 0]
        gx, _ = bspline_bwd(np.ones((1, 1, 1)), cache)
        assert gx[0, 0, 0] == 0.0

    def test_finite_differences(self, rng):
        coeffs = rng.standard_normal((2, 11))
        p = BSplineParams(coeffs=coeffs)
        x = rng.uniform(-3.5, 3.5, size=(2, 2, 7))
        gy = rng.standard_normal(x.shape)
        _, cache = bspline_fwd(x, p)
        gx, gc = bspline_bwd(gy, cache)

        def loss():
            return float(np.sum(bspline_fwd(x, BSplineParams(coeffs=coeffs))[0] * gy))

        assert rel_err(gx, numerical_grad(loss, x)) <= GRAD_TOL
        assert rel_err(gc, numerical_grad(loss, coeffs)) <= GRAD_TOL

    def test_scalar_reference_matches_vectorized(self, rng):
        p = BSplineParams(coeffs=rng.standard_normal((1, 11)))
        for xv in rng.uniform(-4, 4, size=12):
            y_vec, _ = bspline_fwd(np.array([[[xv]]]), p)
            y_ref, _ = bspline_scalar(float(xv), p)
            assert y_ref == pytest.approx(y_vec[0, 0, 0], abs=1e-12)

    def test_bad_coeff_shape(self):
        with pytest.raises(ConfigError):
            BSplineParams(coeffs=np.zeros((1, 7)), intervals=8)


class TestOperationCounts:
    """Per-element cost gap between the learnable families."""

    def test_glinear_scalar_matches_vectorized(self, rng):
        p = GLinearParams(alphas=rng.standard_normal((1, 5)),
                          beta=rng.standard_normal(1),
                          grid=np.array([-1.0, 0.0, 0.5, 2.0]))
        for xv in rng.standard_normal(10) * 2:
            y_vec, _ = glinear_fwd(np.array([[[xv]]]), p)
            y_ref, _ = glinear_scalar(float(xv), p)
            assert y_ref == pytest.approx(y_vec[0, 0, 0], abs=1e-12)

    def test_glinear_comparisons_logarithmic(self):
        for n, bound in [(1, 1), (3, 2), (15, 4), (63, 6)]:
            p = GLinearParams.identity(1, grid=np.linspace(-1, 1, n))
            _, counters = glinear_scalar(0.37, p)
            assert counters["comparisons"] <= bound

    def test_bspline_recursion_linear_in_order(self):
        p = BSplineParams.identity(1)
        _, counters = bspline_scalar(0.37, p)
        # seed + sum_{p=1..k}(p+1) nodes
        assert counters["recursion_nodes"] == 1 + 2 + 3 + 4
        assert counters["levels"] == 3

    def test_default_glinear_cheaper_than_spline(self):
        gl = GLinearParams.identity(1)  # single knot at 0
        bs = BSplineParams.identity(1)
        _, c_gl = glinear_scalar(1.3, gl)
        _, c_bs = bspline_scalar(1.3, bs)
        assert c_gl["comparisons"] == 1
        assert c_gl["comparisons"] < c_bs["recursion_nodes"]
