"""Dense NCHW kernels with hand-derived backward passes.

Everything the upper layers need and nothing more: unfold, grouped 2D
cross-correlation, batchnorm, max/global-average pooling, linear maps and
the elementwise product/sum. Each forward returns (y, cache); the paired
backward consumes the cache exactly once. No autodiff tape.

Conventions fixed here and relied on everywhere else:
  - arrays are NCHW, row-major;
  - convolution means cross-correlation (no kernel flip);
  - unfold columns are [N, C, K*K, L] with the patch index k = ki*K + kj
    ordered row-major over the window and L row-major over output
    locations;
  - padding is zero-padding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DimensionError


def out_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    """Output extent floor((size + 2p - K)/s) + 1; must be >= 1."""
    out = (size + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise DimensionError(
            f"kernel {kernel} with stride {stride}, padding {padding} "
            f"does not fit input extent {size}"
        )
    return out


@dataclass(frozen=True)
class ConvSpec:
    kernel: int
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1 or self.padding < 0 or self.groups < 1:
            raise ConfigError(f"invalid conv spec {self}")

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        return (
            out_extent(h, self.kernel, self.stride, self.padding),
            out_extent(w, self.kernel, self.stride, self.padding),
        )


def _require(cond: bool, msg: str, err=DimensionError) -> None:
    if not cond:
        raise err(msg)


# ---------------------------------------------------------------------------
# unfold and its adjoint
# ---------------------------------------------------------------------------

def _pad2d(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def unfold(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Extract sliding K*K patches per channel: [N,C,H,W] -> [N, C, K*K, L].

    Element [n, c, ki*K+kj, l] is input pixel (i0+ki, j0+kj) of the l-th
    output location's receptive field; out-of-bounds positions read 0.
    """
    _require(x.ndim == 4, f"unfold expects NCHW, got shape {x.shape}")
    n, c, h, w = x.shape
    _require(spec.groups == c,
             f"unfold is per-channel: spec.groups={spec.groups} != C={c}")
    k, s, p = spec.kernel, spec.stride, spec.padding
    ho, wo = spec.out_hw(h, w)
    xp = _pad2d(x, p)
    cols = np.empty((n, c, k * k, ho * wo), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            # strided view of all windows at this in-window offset
            win = xp[:, :, ki:ki + s * ho:s, kj:kj + s * wo:s]
            cols[:, :, ki * k + kj, :] = win.reshape(n, c, ho * wo)
    return cols


def fold(cols: np.ndarray, hw: tuple[int, int], spec: ConvSpec) -> np.ndarray:
    """Adjoint of unfold: scatter-add columns back onto an [N,C,H,W] map.

    Overlapping windows accumulate, which makes this exactly the backward
    of unfold (and the x-gradient path of every conv built on it).
    """
    n, c, kk, l = cols.shape
    h, w = hw
    k, s, p = spec.kernel, spec.stride, spec.padding
    _require(kk == k * k, f"fold: column axis {kk} != K*K = {k * k}")
    ho, wo = spec.out_hw(h, w)
    _require(l == ho * wo, f"fold: location axis {l} != H'*W' = {ho * wo}")
    xp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    for ki in range(k):
        for kj in range(k):
            xp[:, :, ki:ki + s * ho:s, kj:kj + s * wo:s] += \
                cols[:, :, ki * k + kj, :].reshape(n, c, ho, wo)
    if p == 0:
        return xp
    return xp[:, :, p:p + h, p:p + w]


# ---------------------------------------------------------------------------
# grouped 2D convolution (cross-correlation)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Conv2dCache:
    cols_g: np.ndarray          # (N, g, Cg*K*K, L)
    w_g: np.ndarray             # (g, Cout/g, Cg*K*K)
    x_hw: tuple[int, int]
    w_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    spec: ConvSpec
    has_bias: bool


def conv2d_grouped_fwd(x: np.ndarray, w: np.ndarray, b: np.ndarray | None,
                       spec: ConvSpec) -> tuple[np.ndarray, Conv2dCache]:
    """Grouped cross-correlation. w is [C_out, C_in/g, K, K], b is [C_out].

    Internally: unfold -> one batched matmul per group -> reshape. The
    unfold/matmul path is the production path; tests pin it against a
    six-nested-loop oracle.
    """
    _require(x.ndim == 4, f"conv input must be NCHW, got {x.shape}")
    _require(w.ndim == 4, f"conv weight must be 4D, got {w.shape}")
    n, c, h, w_in = x.shape
    c_out, c_g, kh, kw = w.shape
    g = spec.groups
    _require(kh == spec.kernel and kw == spec.kernel,
             f"weight window {kh}x{kw} != spec kernel {spec.kernel}")
    _require(c % g == 0 and c_out % g == 0,
             f"channels ({c} in, {c_out} out) not divisible by groups {g}",
             ConfigError)
    _require(c_g == c // g,
             f"weight expects {c_g} channels/group, input provides {c // g}",
             ConfigError)
    if b is not None:
        _require(b.shape == (c_out,), f"bias shape {b.shape} != ({c_out},)")

    ho, wo = spec.out_hw(h, w_in)
    cols = unfold(x, ConvSpec(spec.kernel, spec.stride, spec.padding, groups=c))
    # (N, C, KK, L) -> (N, g, Cg*KK, L); contiguous, so this is a view
    cols_g = cols.reshape(n, g, c_g * kh * kw, ho * wo)
    w_g = w.reshape(g, c_out // g, c_g * kh * kw)
    y = np.matmul(w_g[None], cols_g)            # (N, g, Cout/g, L)
    y = y.reshape(n, c_out, ho, wo)
    if b is not None:
        y = y + b[None, :, None, None]
    cache = Conv2dCache(cols_g, w_g, (h, w_in), w.shape, y.shape, spec,
                        b is not None)
    return y, cache


def conv2d_grouped_bwd(grad_y: np.ndarray, cache: Conv2dCache):
    """Gradients of conv2d_grouped_fwd: (grad_x, grad_w, grad_b)."""
    _require(grad_y.shape == cache.out_shape,
             f"grad shape {grad_y.shape} != forward output {cache.out_shape}",
             ContractError)
    n, g, m, l = cache.cols_g.shape
    c_out = cache.w_shape[0]
    gy = grad_y.reshape(n, g, c_out // g, l)
    grad_w = np.matmul(gy, cache.cols_g.transpose(0, 1, 3, 2)).sum(axis=0)
    grad_w = grad_w.reshape(cache.w_shape)
    grad_cols = np.matmul(cache.w_g.transpose(0, 2, 1)[None], gy)
    c_in = g * cache.w_shape[1]
    k = cache.spec.kernel
    grad_x = fold(grad_cols.reshape(n, c_in, k * k, l), cache.x_hw, cache.spec)
    grad_b = grad_y.sum(axis=(0, 2, 3)) if cache.has_bias else None
    return grad_x, grad_w, grad_b


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BatchNormCache:
    xhat: np.ndarray
    inv_std: np.ndarray          # per channel
    gamma: np.ndarray
    train: bool
    out_shape: tuple[int, ...]


def batchnorm_fwd(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                  running_mean: np.ndarray, running_var: np.ndarray,
                  train: bool, momentum: float = 0.1, eps: float = 1e-5):
    """Channelwise batchnorm over (N, H, W).

    Returns (y, cache, new_running_mean, new_running_var). Running stats are
    returned rather than mutated; in eval mode they pass through unchanged
    and normalization uses them instead of batch statistics. The running
    variance uses the unbiased estimator, matching the usual convention.
    """
    _require(x.ndim == 4, f"batchnorm expects NCHW, got {x.shape}")
    c = x.shape[1]
    _require(gamma.shape == (c,) and beta.shape == (c,),
             f"affine shape mismatch for C={c}")
    if train:
        m = x.shape[0] * x.shape[2] * x.shape[3]
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        unbiased = var * (m / (m - 1)) if m > 1 else var
        new_mean = (1.0 - momentum) * running_mean + momentum * mean
        new_var = (1.0 - momentum) * running_var + momentum * unbiased
    else:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x - running_mean[None, :, None, None]) * inv_std[None, :, None, None]
        new_mean, new_var = running_mean, running_var
    y = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    cache = BatchNormCache(xhat, inv_std, gamma, train, y.shape)
    return y, cache, new_mean, new_var


def batchnorm_bwd(grad_y: np.ndarray, cache: BatchNormCache):
    """(grad_x, grad_gamma, grad_beta); train mode accounts for the batch
    statistics' dependence on x, eval mode treats them as constants."""
    _require(grad_y.shape == cache.out_shape,
             f"grad shape {grad_y.shape} != forward output {cache.out_shape}",
             ContractError)
    axes = (0, 2, 3)
    grad_gamma = (grad_y * cache.xhat).sum(axis=axes)
    grad_beta = grad_y.sum(axis=axes)
    g_hat = grad_y * cache.gamma[None, :, None, None]
    if cache.train:
        m = grad_y.shape[0] * grad_y.shape[2] * grad_y.shape[3]
        s1 = g_hat.sum(axis=axes)
        s2 = (g_hat * cache.xhat).sum(axis=axes)
        grad_x = (cache.inv_std[None, :, None, None] / m) * (
            m * g_hat
            - s1[None, :, None, None]
            - cache.xhat * s2[None, :, None, None]
        )
    else:
        grad_x = g_hat * cache.inv_std[None, :, None, None]
    return grad_x, grad_gamma, grad_beta


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MaxPoolCache:
    argmax: np.ndarray           # (N, C, L) winner index within each window
    x_hw: tuple[int, int]
    spec: ConvSpec
    out_shape: tuple[int, ...]


def maxpool_fwd(x: np.ndarray, kernel: int, stride: int):
    """Max pooling, no padding (a padded max would leak zeros into windows)."""
    _require(x.ndim == 4, f"maxpool expects NCHW, got {x.shape}")
    n, c, h, w = x.shape
    spec = ConvSpec(kernel, stride, 0, groups=c)
    ho, wo = spec.out_hw(h, w)
    cols = unfold(x, spec)                       # (N, C, KK, L)
    argmax = cols.argmax(axis=2)
    y = np.take_along_axis(cols, argmax[:, :, None, :], axis=2)
    y = y.reshape(n, c, ho, wo)
    return y, MaxPoolCache(argmax, (h, w), spec, y.shape)


def maxpool_bwd(grad_y: np.ndarray, cache: MaxPoolCache) -> np.ndarray:
    _require(grad_y.shape == cache.out_shape,
             f"grad shape {grad_y.shape} != forward output {cache.out_shape}",
             ContractError)
    n, c, ho, wo = grad_y.shape
    kk = cache.spec.kernel ** 2
    grad_cols = np.zeros((n, c, kk, ho * wo), dtype=grad_y.dtype)
    np.put_along_axis(grad_cols, cache.argmax[:, :, None, :],
                      grad_y.reshape(n, c, 1, ho * wo), axis=2)
    return fold(grad_cols, cache.x_hw, cache.spec)


@dataclass(frozen=True)
class GapCache:
    x_shape: tuple[int, ...]


def global_avg_pool_fwd(x: np.ndarray):
    """Spatial mean per channel: [N,C,H,W] -> [N,C,1,1]."""
    _require(x.ndim == 4, f"global_avg_pool expects NCHW, got {x.shape}")
    y = x.mean(axis=(2, 3), keepdims=True)
    return y, GapCache(x.shape)


def global_avg_pool_bwd(grad_y: np.ndarray, cache: GapCache) -> np.ndarray:
    n, c, h, w = cache.x_shape
    _require(grad_y.shape == (n, c, 1, 1),
             f"grad shape {grad_y.shape} != ({n},{c},1,1)", ContractError)
    return np.broadcast_to(grad_y / (h * w), cache.x_shape).copy()


# ---------------------------------------------------------------------------
# linear and elementwise
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearCache:
    x: np.ndarray
    w: np.ndarray
    has_bias: bool
    out_shape: tuple[int, ...]


def linear_fwd(x: np.ndarray, w: np.ndarray, b: np.ndarray | None):
    """y = x @ w.T + b with x [N,F], w [O,F]."""
    _require(x.ndim == 2 and w.ndim == 2, "linear expects 2D input and weight")
    _require(x.shape[1] == w.shape[1],
             f"feature mismatch: input {x.shape[1]} vs weight {w.shape[1]}")
    y = x @ w.T
    if b is not None:
        y = y + b[None, :]
    return y, LinearCache(x, w, b is not None, y.shape)


def linear_bwd(grad_y: np.ndarray, cache: LinearCache):
    _require(grad_y.shape == cache.out_shape,
             f"grad shape {grad_y.shape} != forward output {cache.out_shape}",
             ContractError)
    grad_x = grad_y @ cache.w
    grad_w = grad_y.T @ cache.x
    grad_b = grad_y.sum(axis=0) if cache.has_bias else None
    return grad_x, grad_w, grad_b


@dataclass(frozen=True)
class MulCache:
    a: np.ndarray
    b: np.ndarray
    out_shape: tuple[int, ...]


def _reduce_to_shape(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad over axes where shape has extent 1 (broadcast adjoint)."""
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def mul_fwd(a: np.ndarray, b: np.ndarray):
    """Elementwise product. b may broadcast over trailing spatial axes with
    extent 1 (the SE gate case); no other broadcasting is supported."""
    _require(a.ndim == b.ndim, f"rank mismatch {a.shape} * {b.shape}")
    for da, db in zip(a.shape, b.shape):
        _require(da == db or db == 1 or da == 1,
                 f"shape mismatch {a.shape} * {b.shape}")
    y = a * b
    return y, MulCache(a, b, y.shape)


def mul_bwd(grad_y: np.ndarray, cache: MulCache):
    _require(grad_y.shape == cache.out_shape,
             f"grad shape {grad_y.shape} != forward output {cache.out_shape}",
             ContractError)
    grad_a = _reduce_to_shape(grad_y * cache.b, cache.a.shape)
    grad_b = _reduce_to_shape(grad_y * cache.a, cache.b.shape)
    return grad_a, grad_b


@dataclass(frozen=True)
class AddCache:
    out_shape: tuple[int, ...]


def add_fwd(a: np.ndarray, b: np.ndarray):
    _require(a.shape == b.shape, f"add shape mismatch {a.shape} + {b.shape}")
    y = a + b
    return y, AddCache(y.shape)


def add_bwd(grad_y: np.ndarray, cache: AddCache):
    _require(grad_y.shape == cache.out_shape,
             f"grad shape {grad_y.shape} != forward output {cache.out_shape}",
             ContractError)
    return grad_y, grad_y.copy()
