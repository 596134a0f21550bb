"""Fixed and learnable activation functions with analytic gradients.

The fixed basis is SiLU. Three learnable families are provided, each
parameterized per channel and applied elementwise along axis 1:

* grid-linear: continuous piecewise-linear map over a fixed knot grid,
  evaluated by telescoping segment endpoints so knot continuity is exact
  in floating point, not approximate;
* PReLU: single learnable negative slope;
* cubic B-spline: order-3 spline on a uniform grid with clamped inputs.

All backward functions consume the cache returned by their forward and
return gradients for the input and every learnable parameter. Knot grids
are fixed (non-learnable) throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, DimensionError

__all__ = [
    "sigmoid",
    "silu",
    "silu_bwd",
    "GLinearParams",
    "glinear_fwd",
    "glinear_bwd",
    "PReLUParams",
    "prelu_fwd",
    "prelu_bwd",
    "BSplineParams",
    "bspline_fwd",
    "bspline_bwd",
    "glinear_scalar",
    "bspline_scalar",
]


# ---------------------------------------------------------------------
# fixed basis
# ---------------------------------------------------------------------

def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x)
    # exp of a non-positive argument never overflows
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def silu(x):
    """y = x * sigmoid(x)."""
    return x * sigmoid(x)


def silu_bwd(grad_y, x):
    """d/dx of silu: sigma(x) * (1 + x * (1 - sigma(x)))."""
    s = sigmoid(x)
    return grad_y * s * (1.0 + x * (1.0 - s))


# ---------------------------------------------------------------------
# grid-linear
# ---------------------------------------------------------------------

@dataclass
class GLinearParams:
    """Per-channel continuous piecewise-linear map.

    With knots g_1 < ... < g_n, slope alphas[c, i] applies on the i-th
    segment (``x <= g_1``, then ``g_i < x <= g_{i+1}``, then ``x > g_n``).
    The first segment's line passes through (0, beta); every later
    segment starts from the previous segment's endpoint value, so the map
    is continuous at each knot by construction.

    alphas: (C, n+1) learnable slopes
    beta:   (C,)     learnable offset at the origin of the first segment
    grid:   (n,)     fixed knots, shared across channels
    """

    alphas: np.ndarray
    beta: np.ndarray
    grid: np.ndarray

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=np.float64) \
            if not isinstance(self.alphas, np.ndarray) else self.alphas
        self.beta = np.asarray(self.beta)
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.grid.ndim != 1 or self.grid.size < 1:
            raise ConfigError("grid must be a 1-d array with at least one knot")
        if np.any(np.diff(self.grid) <= 0):
            raise ConfigError("grid knots must be strictly increasing")
        if self.alphas.ndim != 2 or self.alphas.shape[1] != self.grid.size + 1:
            raise ConfigError(
                f"alphas must be (channels, n_knots+1), got {self.alphas.shape}"
            )
        if self.beta.shape != (self.alphas.shape[0],):
            raise ConfigError("beta must be (channels,)")

    @property
    def channels(self) -> int:
        return self.alphas.shape[0]

    @property
    def n_knots(self) -> int:
        return self.grid.size

    @staticmethod
    def identity(channels: int, grid=(0.0,), dtype=np.float64) -> "GLinearParams":
        """Identity-map initialization: beta = 0, all slopes 1."""
        g = np.asarray(grid, dtype=np.float64)
        return GLinearParams(
            alphas=np.ones((channels, g.size + 1), dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            grid=g,
        )

    def anchor_points(self) -> np.ndarray:
        """Segment reference points: 0 for the first segment, then the knots."""
        return np.concatenate([[0.0], self.grid])

    def anchor_values(self) -> np.ndarray:
        """(C, n+1) value of each segment's line at its reference point.

        anchor_values[:, 0] = beta; each later entry extends the previous
        segment's line to the next knot. The recurrence mirrors the exact
        float operations of the forward evaluation at a knot, so the left
        and right segment values agree bitwise there.
        """
        pts = self.anchor_points().astype(self.alphas.dtype, copy=False)
        vals = np.empty_like(self.alphas)
        vals[:, 0] = self.beta
        for k in range(1, pts.size):
            vals[:, k] = vals[:, k - 1] + self.alphas[:, k - 1] * (pts[k] - pts[k - 1])
        return vals


@dataclass
class GLinearCache:
    x: np.ndarray
    seg: np.ndarray
    params: GLinearParams


def _channels_first_3d(x, channels):
    if x.ndim < 2 or x.shape[1] != channels:
        raise DimensionError(
            f"expected axis 1 of size {channels}, got input shape {x.shape}"
        )
    return x.reshape(x.shape[0], channels, -1)


def glinear_fwd(x, params: GLinearParams):
    """Apply the per-channel grid-linear map along axis 1.

    Inputs exactly at a knot take the left segment's slope (segments are
    closed on the right).
    """
    c = params.channels
    x3 = _channels_first_3d(x, c)
    # seg[v] = number of knots strictly below v, in 0..n
    seg = np.searchsorted(params.grid, x3.reshape(-1), side="left")
    seg = seg.reshape(x3.shape)
    cidx = np.arange(c)[None, :, None]
    pts = params.anchor_points().astype(x3.dtype, copy=False)
    vals = params.anchor_values()
    y = vals[cidx, seg] + params.alphas[cidx, seg] * (x3 - pts[seg])
    return y.reshape(x.shape), GLinearCache(x=x3, seg=seg, params=params)


def glinear_bwd(grad_y, cache: GLinearCache):
    """Returns (grad_x, grad_alphas, grad_beta).

    A slope alphas[:, j] moves its own segment directly and, through the
    telescoped endpoints, shifts every segment above it by the fixed gap
    width, so its gradient picks up the summed upstream signal of all
    higher segments.
    """
    p = cache.params
    c = p.channels
    gy = grad_y.reshape(cache.x.shape)
    seg = cache.seg
    cidx = np.arange(c)[None, :, None]

    grad_x = (gy * p.alphas[cidx, seg]).reshape(grad_y.shape)
    grad_beta = gy.sum(axis=(0, 2))

    n = p.n_knots
    pts = p.anchor_points()
    gaps = np.diff(pts)  # (n,)
    grad_alphas = np.zeros_like(p.alphas)
    seg_sums = np.zeros((c, n + 1))
    for j in range(n + 1):
        mask = seg == j
        grad_alphas[:, j] = np.where(mask, gy * (cache.x - pts[j]), 0.0).sum(axis=(0, 2))
        seg_sums[:, j] = np.where(mask, gy, 0.0).sum(axis=(0, 2))
    # chain term: everything in segments above j sees alphas[:, j] via the
    # endpoint shift of width gaps[j]; the last slope has no such term
    tail = np.cumsum(seg_sums[:, ::-1], axis=1)[:, ::-1]
    grad_alphas[:, :n] += gaps[None, :] * tail[:, 1:]
    return grad_x, grad_alphas, grad_beta


# ---------------------------------------------------------------------
# PReLU
# ---------------------------------------------------------------------

@dataclass
class PReLUParams:
    slope: np.ndarray  # (C,) negative-side slope

    def __post_init__(self):
        self.slope = np.asarray(self.slope)
        if self.slope.ndim != 1:
            raise ConfigError("slope must be (channels,)")

    @property
    def channels(self) -> int:
        return self.slope.shape[0]

    @staticmethod
    def init(channels: int, slope: float = 0.25, dtype=np.float64) -> "PReLUParams":
        return PReLUParams(slope=np.full(channels, slope, dtype=dtype))


@dataclass
class PReLUCache:
    x: np.ndarray
    params: PReLUParams


def prelu_fwd(x, params: PReLUParams):
    x3 = _channels_first_3d(x, params.channels)
    a = params.slope[None, :, None]
    y = np.where(x3 > 0, x3, a * x3)
    return y.reshape(x.shape), PReLUCache(x=x3, params=params)


def prelu_bwd(grad_y, cache: PReLUCache):
    """Returns (grad_x, grad_slope)."""
    a = cache.params.slope[None, :, None]
    gy = grad_y.reshape(cache.x.shape)
    pos = cache.x > 0
    grad_x = np.where(pos, gy, a * gy).reshape(grad_y.shape)
    grad_slope = np.where(pos, 0.0, gy * cache.x).sum(axis=(0, 2))
    return grad_x, grad_slope


# ---------------------------------------------------------------------
# cubic B-spline
# ---------------------------------------------------------------------

# basis polynomials of the uniform cubic B-spline on a unit interval,
# t in [0, 1]; weights multiply coefficients i..i+3 of interval i
def _cubic_basis(t):
    t2 = t * t
    t3 = t2 * t
    n0 = (1.0 - t) ** 3 / 6.0
    n1 = (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0
    n2 = (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0
    n3 = t3 / 6.0
    return n0, n1, n2, n3


def _cubic_basis_deriv(t):
    t2 = t * t
    d0 = -((1.0 - t) ** 2) / 2.0
    d1 = (9.0 * t2 - 12.0 * t) / 6.0
    d2 = (-9.0 * t2 + 6.0 * t + 3.0) / 6.0
    d3 = t2 / 2.0
    return d0, d1, d2, d3


@dataclass
class BSplineParams:
    """Order-3 spline on a uniform grid over [-range, range].

    coeffs: (C, intervals + 3) learnable control coefficients per channel.
    Inputs outside the range are clamped to it, so the map is constant
    (zero input-gradient) beyond the grid.
    """

    coeffs: np.ndarray
    range_: float = 4.0
    intervals: int = 8
    order: int = field(default=3, init=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs)
        if self.range_ <= 0 or self.intervals < 1:
            raise ConfigError("spline range must be positive, intervals >= 1")
        if self.coeffs.ndim != 2 or self.coeffs.shape[1] != self.intervals + 3:
            raise ConfigError(
                f"coeffs must be (channels, intervals+3), got {self.coeffs.shape}"
            )

    @property
    def channels(self) -> int:
        return self.coeffs.shape[0]

    @property
    def step(self) -> float:
        return 2.0 * self.range_ / self.intervals

    def greville_abscissae(self) -> np.ndarray:
        """Coefficient locations at which coeffs[c, j] = f(xi_j) reproduces f
        exactly for affine f."""
        j = np.arange(self.intervals + 3, dtype=np.float64)
        return -self.range_ + (j - 1.0) * self.step

    @staticmethod
    def identity(channels: int, range_: float = 4.0, intervals: int = 8,
                 dtype=np.float64) -> "BSplineParams":
        p = BSplineParams(
            coeffs=np.zeros((channels, intervals + 3), dtype=dtype),
            range_=range_, intervals=intervals,
        )
        p.coeffs[:] = p.greville_abscissae()[None, :].astype(dtype)
        return p


@dataclass
class BSplineCache:
    interval: np.ndarray
    t: np.ndarray
    clamped: np.ndarray
    x_shape: tuple
    params: BSplineParams


def bspline_fwd(x, params: BSplineParams):
    c = params.channels
    x3 = _channels_first_3d(x, c)
    r, h, g = params.range_, params.step, params.intervals
    xc = np.clip(x3, -r, r)
    clamped = (x3 < -r) | (x3 > r)
    # interval index in 0..g-1; x == r folds into the last interval at t=1
    i = np.minimum((xc + r) // h, g - 1).astype(np.intp)
    t = (xc + r) / h - i
    n0, n1, n2, n3 = _cubic_basis(t)
    cidx = np.arange(c)[None, :, None]
    co = params.coeffs
    y = (co[cidx, i] * n0 + co[cidx, i + 1] * n1
         + co[cidx, i + 2] * n2 + co[cidx, i + 3] * n3)
    cache = BSplineCache(interval=i, t=t, clamped=clamped,
                         x_shape=x.shape, params=params)
    return y.reshape(x.shape), cache


def bspline_bwd(grad_y, cache: BSplineCache):
    """Returns (grad_x, grad_coeffs)."""
    p = cache.params
    c = p.channels
    gy = grad_y.reshape(cache.interval.shape)
    i, t = cache.interval, cache.t
    cidx = np.arange(c)[None, :, None]
    co = p.coeffs

    d0, d1, d2, d3 = _cubic_basis_deriv(t)
    dy_dt = (co[cidx, i] * d0 + co[cidx, i + 1] * d1
             + co[cidx, i + 2] * d2 + co[cidx, i + 3] * d3)
    grad_x = np.where(cache.clamped, 0.0, gy * dy_dt / p.step)

    grad_coeffs = np.zeros_like(co)
    for m, nm in enumerate(_cubic_basis(t)):
        np.add.at(grad_coeffs, (np.broadcast_to(cidx, i.shape), i + m), gy * nm)
    return grad_x.reshape(cache.x_shape), grad_coeffs


# ---------------------------------------------------------------------
# instrumented scalar references
# ---------------------------------------------------------------------
# Single-element evaluators that count the work the vectorized kernels
# amortize: grid-linear needs a binary search over the knots, the spline
# needs the full Cox-de-Boor recursion. Used to pin down the per-element
# cost gap between the two families.

def glinear_scalar(x: float, params: GLinearParams, channel: int = 0):
    """Evaluate one element; returns (y, counters)."""
    g = params.grid
    comparisons = 0
    lo, hi = 0, g.size  # segment index in [lo, hi]
    while lo < hi:
        mid = (lo + hi) // 2
        comparisons += 1
        if x > g[mid]:
            lo = mid + 1
        else:
            hi = mid
    seg = lo
    pts = params.anchor_points()
    vals = params.anchor_values()
    y = vals[channel, seg] + params.alphas[channel, seg] * (x - pts[seg])
    return float(y), {"comparisons": comparisons}


def bspline_scalar(x: float, params: BSplineParams, channel: int = 0):
    """Cox-de-Boor evaluation of one element; returns (y, counters).

    Counts every basis-function node visited by the recursion across all
    orders, which grows linearly with the spline order.
    """
    r, h, g, k = params.range_, params.step, params.intervals, params.order
    xc = min(max(x, -r), r)
    # full knot vector t_j = -r + (j - k) h, j = 0..g+2k
    knots = np.array([-r + (j - k) * h for j in range(g + 2 * k + 1)])
    counters = {"recursion_nodes": 0, "levels": k}
    iv = min(int((xc + r) // h), g - 1) + k  # knot span containing xc

    # order-0 seed on the active span
    b = {(iv, 0): 1.0}
    counters["recursion_nodes"] += 1
    for p in range(1, k + 1):
        nb = {}
        for j in range(iv - p, iv + 1):
            counters["recursion_nodes"] += 1
            left = b.get((j, p - 1), 0.0)
            right = b.get((j + 1, p - 1), 0.0)
            acc = 0.0
            if left:
                acc += (xc - knots[j]) / (knots[j + p] - knots[j]) * left
            if right:
                acc += (knots[j + p + 1] - xc) / (knots[j + p + 1] - knots[j + 1]) * right
            nb[(j, p)] = acc
        b = nb
    # basis j in knot numbering is coefficient column j: the span iv
    # activates bases iv-k..iv, which on real interval i are columns i..i+k
    y = 0.0
    for (j, _), v in b.items():
        if 0 <= j < params.coeffs.shape[1]:
            y += params.coeffs[channel, j] * v
    return float(y), counters
