"""The KA convolution layer.

One layer maps [N, C_in, H, W] to [N, C_out, H', W'] through five stages:

1. convkan: two branches over K x K patches, multiplied elementwise.
   Branch A pushes SiLU(x) through a depthwise-style grouped conv whose
   weights hold Q = 2K^2 + 1 filters per input channel. Branch B unfolds
   x into patches, applies the per-channel learnable activation to every
   patch element, and reduces each patch with a second weight set of the
   same [C_in, Q, K^2] shape. Both branches produce [N, C_in*Q, H', W'].
2. batchnorm over the C_in*Q channels,
3. SiLU,
4. outer stage combining the Q terms of each channel,
5. 1x1 mixing conv with bias producing C_out channels.

Two outer-stage layouts are supported. "collapse" reduces the Q terms of
each channel to a single value (w_outer is [C_in, Q, 1, 1], grouped per
channel) and mixes C_in -> C_out. "wide" first mixes the Q terms of each
channel into Q new terms (w_outer is [C_in*Q, Q, 1, 1], grouped) and lets
the final conv see all C_in*Q channels. "wide" is what the network
presets use; "collapse" is the minimal layout and the one the parameter
identities in the tests are written against.

The two branches can also be multiplied before the patch reduction
(product_mode="per_element") instead of after it ("post_sum", default).
The per-element form computes sum_k w1_k*w2_k*silu(u_k)*act(u_k); the
default multiplies the two aggregated branch outputs.

All gradients are derived by hand; backward functions consume the cache
of the matching forward.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .activations import (
    BSplineParams,
    GLinearParams,
    PReLUParams,
    bspline_bwd,
    bspline_fwd,
    glinear_bwd,
    glinear_fwd,
    prelu_bwd,
    prelu_fwd,
    silu,
    silu_bwd,
)
from .errors import ConfigError, ContractError, DimensionError
from .tensor_ops import (
    ConvSpec,
    batchnorm_bwd,
    batchnorm_fwd,
    conv2d_grouped_bwd,
    conv2d_grouped_fwd,
    fold,
    unfold,
)

__all__ = [
    "KAConvParams",
    "KAConvGrads",
    "convkan_fwd",
    "kaconv_layer_fwd",
    "kaconv_layer_bwd",
    "kaconv_flops",
    "KAConvFlops",
    "standard_conv_flops",
    "kaconv_reference_oracle",
]

OUTER_MODES = ("collapse", "wide")
PRODUCT_MODES = ("post_sum", "per_element")
ACT_FAMILIES = ("glinear", "prelu", "bspline")


def _kaiming_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


@dataclass
class KAConvParams:
    """Weights and fixed geometry of one KA convolution layer.

    Q is always 2K^2 + 1. w_base are grouped conv weights [C_in*Q, 1, K, K]
    (groups = C_in) applied to SiLU(x); w_learn, stored [C_in, Q, K^2],
    reduces activated patches. The learnable activation is per input
    channel, shared across the Q terms and all patch positions.
    """

    k: int
    c_in: int
    c_out: int
    stride: int
    padding: int
    w_base: np.ndarray
    w_learn: np.ndarray
    act: GLinearParams | PReLUParams | BSplineParams
    norm_gamma: np.ndarray
    norm_beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    w_outer: np.ndarray
    w_mix: np.ndarray
    b_mix: np.ndarray
    outer_mode: str = "collapse"
    product_mode: str = "post_sum"

    def __post_init__(self):
        q, c, co = self.q, self.c_in, self.c_out
        if self.outer_mode not in OUTER_MODES:
            raise ConfigError(f"unknown outer_mode {self.outer_mode!r}")
        if self.product_mode not in PRODUCT_MODES:
            raise ConfigError(f"unknown product_mode {self.product_mode!r}")
        if self.w_base.shape != (c * q, 1, self.k, self.k):
            raise ConfigError(f"w_base must be {(c * q, 1, self.k, self.k)}, "
                              f"got {self.w_base.shape}")
        if self.w_learn.shape != (c, q, self.k * self.k):
            raise ConfigError(f"w_learn must be {(c, q, self.k * self.k)}, "
                              f"got {self.w_learn.shape}")
        if self.act.channels != c:
            raise ConfigError("activation params must cover C_in channels")
        for name in ("norm_gamma", "norm_beta", "running_mean", "running_var"):
            if getattr(self, name).shape != (c * q,):
                raise ConfigError(f"{name} must be ({c * q},)")
        outer_shape = ((c, q, 1, 1) if self.outer_mode == "collapse"
                       else (c * q, q, 1, 1))
        if self.w_outer.shape != outer_shape:
            raise ConfigError(f"w_outer must be {outer_shape}, got {self.w_outer.shape}")
        mix_in = c if self.outer_mode == "collapse" else c * q
        if self.w_mix.shape != (co, mix_in, 1, 1):
            raise ConfigError(f"w_mix must be {(co, mix_in, 1, 1)}, "
                              f"got {self.w_mix.shape}")
        if self.b_mix.shape != (co,):
            raise ConfigError(f"b_mix must be ({co},)")

    @property
    def q(self) -> int:
        # outer-term count mandated by the 2-d decomposition
        return 2 * self.k * self.k + 1

    @property
    def conv_spec(self) -> ConvSpec:
        return ConvSpec(self.k, self.stride, self.padding, groups=self.c_in)

    @staticmethod
    def init(c_in: int, c_out: int, k: int = 3, stride: int = 1,
             padding: Optional[int] = None, outer_mode: str = "collapse",
             product_mode: str = "post_sum", act_family: str = "glinear",
             rng: Optional[np.random.Generator] = None,
             dtype=np.float64) -> "KAConvParams":
        """Kaiming-uniform conv weights, identity norm and activation."""
        if rng is None:
            rng = np.random.default_rng(0)
        if padding is None:
            padding = k // 2
        q = 2 * k * k + 1
        if act_family == "glinear":
            act = GLinearParams.identity(c_in, dtype=dtype)
        elif act_family == "prelu":
            act = PReLUParams.init(c_in, dtype=dtype)
        elif act_family == "bspline":
            act = BSplineParams.identity(c_in, dtype=dtype)
        else:
            raise ConfigError(f"unknown act_family {act_family!r}; "
                              f"expected one of {ACT_FAMILIES}")
        fan_patch = k * k
        mix_in = c_in if outer_mode == "collapse" else c_in * q
        outer_shape = (c_in, q, 1, 1) if outer_mode == "collapse" else (c_in * q, q, 1, 1)
        return KAConvParams(
            k=k, c_in=c_in, c_out=c_out, stride=stride, padding=padding,
            w_base=_kaiming_uniform(rng, (c_in * q, 1, k, k), fan_patch, dtype),
            w_learn=_kaiming_uniform(rng, (c_in, q, k * k), fan_patch, dtype),
            act=act,
            norm_gamma=np.ones(c_in * q, dtype=dtype),
            norm_beta=np.zeros(c_in * q, dtype=dtype),
            running_mean=np.zeros(c_in * q, dtype=dtype),
            running_var=np.ones(c_in * q, dtype=dtype),
            w_outer=_kaiming_uniform(rng, outer_shape, q, dtype),
            w_mix=_kaiming_uniform(rng, (c_out, mix_in, 1, 1), mix_in, dtype),
            b_mix=np.zeros(c_out, dtype=dtype),
            outer_mode=outer_mode, product_mode=product_mode,
        )

    def act_param_arrays(self) -> dict:
        if isinstance(self.act, GLinearParams):
            return {"act_alphas": self.act.alphas, "act_beta": self.act.beta}
        if isinstance(self.act, PReLUParams):
            return {"act_slope": self.act.slope}
        return {"act_coeffs": self.act.coeffs}

    def named_params(self) -> dict:
        """Learnable arrays by name, in a fixed order. Views, not copies."""
        out = {"w_base": self.w_base, "w_learn": self.w_learn}
        out.update(self.act_param_arrays())
        out.update({
            "norm_gamma": self.norm_gamma, "norm_beta": self.norm_beta,
            "w_outer": self.w_outer, "w_mix": self.w_mix, "b_mix": self.b_mix,
        })
        return out

    def named_buffers(self) -> dict:
        """Non-learnable state updated by training-mode forwards."""
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def param_count(self) -> int:
        return sum(a.size for a in self.named_params().values())


def _act_fwd(x, act):
    if isinstance(act, GLinearParams):
        return glinear_fwd(x, act)
    if isinstance(act, PReLUParams):
        return prelu_fwd(x, act)
    return bspline_fwd(x, act)


def _act_bwd(grad_y, act, cache) -> tuple:
    """Returns (grad_x, dict of param-gradient arrays)."""
    if isinstance(act, GLinearParams):
        gx, ga, gb = glinear_bwd(grad_y, cache)
        return gx, {"act_alphas": ga, "act_beta": gb}
    if isinstance(act, PReLUParams):
        gx, gs = prelu_bwd(grad_y, cache)
        return gx, {"act_slope": gs}
    gx, gc = bspline_bwd(grad_y, cache)
    return gx, {"act_coeffs": gc}


# ---------------------------------------------------------------------
# convkan: the two-branch product stage
# ---------------------------------------------------------------------

@dataclass
class ConvkanCache:
    x: np.ndarray
    out_hw: tuple
    act_cache: object
    # post_sum fields
    base_cache: object = None
    branch_a: Optional[np.ndarray] = None
    branch_b: Optional[np.ndarray] = None
    act_u: Optional[np.ndarray] = None
    # per_element fields
    u: Optional[np.ndarray] = None
    silu_u: Optional[np.ndarray] = None
    prod_u: Optional[np.ndarray] = None
    params: Optional[KAConvParams] = None


def convkan_fwd(x, p: KAConvParams, branch_a_shift: float = 0.0):
    """Two-branch product over patches -> [N, C_in*Q, H', W'].

    branch_a_shift is a test hook added to the basis branch before the
    product (post_sum mode only); zero in all real use.
    """
    if x.ndim != 4 or x.shape[1] != p.c_in:
        raise DimensionError(f"expected [N, {p.c_in}, H, W], got {x.shape}")
    n = x.shape[0]
    spec = p.conv_spec
    ho, wo = spec.out_hw(x.shape[2], x.shape[3])
    u = unfold(x, spec)                      # [N, C, K^2, L]
    g, act_cache = _act_fwd(u, p.act)

    if p.product_mode == "post_sum":
        a, base_cache = conv2d_grouped_fwd(silu(x), p.w_base, None, spec)
        if branch_a_shift != 0.0:
            a = a + branch_a_shift
        b = np.matmul(p.w_learn[None], g)    # [N, C, Q, L]
        b = b.reshape(n, p.c_in * p.q, ho, wo)
        y = a * b
        cache = ConvkanCache(x=x, out_hw=(ho, wo), act_cache=act_cache,
                             base_cache=base_cache, branch_a=a, branch_b=b,
                             act_u=g, params=p)
        return y, cache

    # per_element: multiply before the patch reduction
    if branch_a_shift != 0.0:
        raise ConfigError("branch_a_shift applies to post_sum mode only")
    s = silu(u)
    prod = s * g
    wb = p.w_base.reshape(p.c_in, p.q, p.k * p.k)
    we = wb * p.w_learn
    y = np.matmul(we[None], prod).reshape(n, p.c_in * p.q, ho, wo)
    cache = ConvkanCache(x=x, out_hw=(ho, wo), act_cache=act_cache,
                         u=u, silu_u=s, prod_u=prod, act_u=g, params=p)
    return y, cache


def convkan_bwd(grad_y, cache: ConvkanCache):
    """Returns (grad_x, dict of parameter gradients for the convkan stage)."""
    p = cache.params
    n = grad_y.shape[0]
    ho, wo = cache.out_hw
    hw = (cache.x.shape[2], cache.x.shape[3])
    spec = p.conv_spec
    if grad_y.shape != (n, p.c_in * p.q, ho, wo):
        raise ContractError(f"grad shape {grad_y.shape} does not match forward "
                            f"output {(n, p.c_in * p.q, ho, wo)}")

    if p.product_mode == "post_sum":
        ga = grad_y * cache.branch_b
        gb = grad_y * cache.branch_a
        # basis branch: conv bwd, then silu bwd into x
        grad_s, grad_w_base, _ = conv2d_grouped_bwd(ga, cache.base_cache)
        grad_x = silu_bwd(grad_s, cache.x)
        # learnable branch: patch reduction bwd, activation bwd, fold
        gb4 = gb.reshape(n, p.c_in, p.q, ho * wo)
        grad_w_learn = np.matmul(gb4, cache.act_u.transpose(0, 1, 3, 2)).sum(axis=0)
        grad_g = np.matmul(p.w_learn.transpose(0, 2, 1)[None], gb4)
        grad_u, act_grads = _act_bwd(grad_g, p.act, cache.act_cache)
        grad_x += fold(grad_u, hw, spec)
        grads = {"w_base": grad_w_base, "w_learn": grad_w_learn, **act_grads}
        return grad_x, grads

    gy4 = grad_y.reshape(n, p.c_in, p.q, ho * wo)
    wb = p.w_base.reshape(p.c_in, p.q, p.k * p.k)
    we = wb * p.w_learn
    grad_we = np.matmul(gy4, cache.prod_u.transpose(0, 1, 3, 2)).sum(axis=0)
    grad_w_base = (grad_we * p.w_learn).reshape(p.w_base.shape)
    grad_w_learn = grad_we * wb
    grad_prod = np.matmul(we.transpose(0, 2, 1)[None], gy4)
    grad_g = grad_prod * cache.silu_u
    grad_su = grad_prod * cache.act_u
    grad_u, act_grads = _act_bwd(grad_g, p.act, cache.act_cache)
    grad_u = grad_u + silu_bwd(grad_su, cache.u)
    grad_x = fold(grad_u, hw, spec)
    grads = {"w_base": grad_w_base, "w_learn": grad_w_learn, **act_grads}
    return grad_x, grads


# ---------------------------------------------------------------------
# full layer: convkan -> norm -> act -> outer -> mix
# ---------------------------------------------------------------------

@dataclass
class KAConvCache:
    convkan: ConvkanCache
    norm_cache: object
    normed: np.ndarray
    outer_cache: object
    mix_cache: object
    params: KAConvParams


@dataclass
class KAConvGrads:
    """Gradient arrays keyed like KAConvParams.named_params()."""
    by_name: dict

    def __getitem__(self, name):
        return self.by_name[name]


def kaconv_layer_fwd(x, p: KAConvParams, train: bool = True):
    """Full layer forward. Training mode updates the running norm
    statistics in place (the only state this function mutates)."""
    z, ck_cache = convkan_fwd(x, p)
    zn, norm_cache, new_mean, new_var = batchnorm_fwd(
        z, p.norm_gamma, p.norm_beta, p.running_mean, p.running_var, train)
    if train:
        p.running_mean[:] = new_mean
        p.running_var[:] = new_var
    a = silu(zn)
    outer_groups = p.c_in
    o, outer_cache = conv2d_grouped_fwd(
        a, p.w_outer, None, ConvSpec(1, groups=outer_groups))
    y, mix_cache = conv2d_grouped_fwd(o, p.w_mix, p.b_mix, ConvSpec(1))
    cache = KAConvCache(convkan=ck_cache, norm_cache=norm_cache, normed=zn,
                        outer_cache=outer_cache, mix_cache=mix_cache, params=p)
    return y, cache


def kaconv_layer_bwd(grad_y, cache: KAConvCache):
    """Returns (grad_x, KAConvGrads)."""
    p = cache.params
    grad_o, grad_w_mix, grad_b_mix = conv2d_grouped_bwd(grad_y, cache.mix_cache)
    grad_a, grad_w_outer, _ = conv2d_grouped_bwd(grad_o, cache.outer_cache)
    grad_zn = silu_bwd(grad_a, cache.normed)
    grad_z, grad_gamma, grad_beta = batchnorm_bwd(grad_zn, cache.norm_cache)
    grad_x, ck_grads = convkan_bwd(grad_z, cache.convkan)
    grads = dict(ck_grads)
    grads.update({
        "norm_gamma": grad_gamma, "norm_beta": grad_beta,
        "w_outer": grad_w_outer, "w_mix": grad_w_mix, "b_mix": grad_b_mix,
    })
    return grad_x, KAConvGrads(by_name=grads)


# ---------------------------------------------------------------------
# cost accounting
# ---------------------------------------------------------------------

@dataclass(frozen=True)
class KAConvFlops:
    """MAC counts of one layer forward at a given input size.

    inner_per_branch counts one K^2-sized patch reduction over all Q
    terms; both branches pay it, so `total` includes it twice. headline
    is the two-term figure used for like-for-like comparisons against a
    standard convolution: one inner reduction plus the mixing conv.
    Elementwise work (the branch product, norm scale-shift, activations)
    is tallied separately at one MAC per element.
    """
    out_hw: tuple
    inner_per_branch: int
    outer: int
    mix: int
    elementwise: int

    @property
    def total(self) -> int:
        return 2 * self.inner_per_branch + self.outer + self.mix + self.elementwise

    @property
    def headline(self) -> int:
        return self.inner_per_branch + self.mix


def kaconv_flops(p: KAConvParams, h: int, w: int) -> KAConvFlops:
    ho, wo = p.conv_spec.out_hw(h, w)
    hw_out = ho * wo
    c, q, k2, co = p.c_in, p.q, p.k * p.k, p.c_out
    inner = hw_out * c * q * k2
    if p.outer_mode == "collapse":
        outer = hw_out * c * q
        mix = hw_out * c * co
    else:
        outer = hw_out * c * q * q
        mix = hw_out * c * q * co
    elementwise = (
        hw_out * c * q        # branch product
        + 2 * hw_out * c * q  # norm scale-shift + activation
        + hw_out * c * k2     # learnable activation on unfolded elements
        + h * w * c           # basis activation on the input
    )
    return KAConvFlops(out_hw=(ho, wo), inner_per_branch=inner,
                       outer=outer, mix=mix, elementwise=elementwise)


def standard_conv_flops(c_in: int, c_out: int, k: int, ho: int, wo: int) -> int:
    """MACs of a plain dense conv at the same output size, for comparison."""
    return ho * wo * c_out * c_in * k * k


# ---------------------------------------------------------------------
# nested-loop reference
# ---------------------------------------------------------------------

def _silu_scalar(v: float) -> float:
    import math
    if v >= 0:
        return v / (1.0 + math.exp(-v))
    e = math.exp(v)
    return v * e / (1.0 + e)


def _act_scalar(v: float, act, c: int) -> float:
    from .activations import bspline_scalar, glinear_scalar
    if isinstance(act, GLinearParams):
        return glinear_scalar(v, act, channel=c)[0]
    if isinstance(act, PReLUParams):
        return v if v > 0 else float(act.slope[c]) * v
    return bspline_scalar(v, act, channel=c)[0]


def kaconv_reference_oracle(x, p: KAConvParams):
    """Slow per-patch evaluation of the full layer, eval-mode norm.

    Loops explicitly over batch, channel, outer term, output location and
    patch position; shares no unfold/reshape machinery with the fast
    path. Intended for small inputs only.
    """
    n, c, h, w = x.shape
    if c != p.c_in:
        raise DimensionError(f"expected {p.c_in} channels, got {c}")
    k, q, s, pad = p.k, p.q, p.stride, p.padding
    ho, wo = p.conv_spec.out_hw(h, w)
    wb = p.w_base.reshape(c, q, k, k)
    wl = p.w_learn  # [C, Q, K^2]

    z = np.zeros((n, c * q, ho, wo))
    for ni in range(n):
        for ci in range(c):
            for qi in range(q):
                for oi in range(ho):
                    for oj in range(wo):
                        acc_a, acc_b, acc_e = 0.0, 0.0, 0.0
                        for ki in range(k):
                            for kj in range(k):
                                ii = oi * s - pad + ki
                                jj = oj * s - pad + kj
                                v = x[ni, ci, ii, jj] \
                                    if 0 <= ii < h and 0 <= jj < w else 0.0
                                bval = wb[ci, qi, ki, kj] * _silu_scalar(v)
                                lval = wl[ci, qi, ki * k + kj] \
                                    * _act_scalar(v, p.act, ci)
                                acc_a += bval
                                acc_b += lval
                                acc_e += bval * lval
                        z[ni, ci * q + qi, oi, oj] = (
                            acc_e if p.product_mode == "per_element"
                            else acc_a * acc_b)

    # eval-mode norm, then activation, per channel scalars
    zn = np.empty_like(z)
    for cq in range(c * q):
        inv = 1.0 / np.sqrt(p.running_var[cq] + 1e-5)
        for ni in range(n):
            for oi in range(ho):
                for oj in range(wo):
                    xh = (z[ni, cq, oi, oj] - p.running_mean[cq]) * inv
                    zn[ni, cq, oi, oj] = _silu_scalar(
                        p.norm_gamma[cq] * xh + p.norm_beta[cq])

    if p.outer_mode == "collapse":
        o = np.zeros((n, c, ho, wo))
        for ni in range(n):
            for ci in range(c):
                for oi in range(ho):
                    for oj in range(wo):
                        acc = 0.0
                        for qi in range(q):
                            acc += p.w_outer[ci, qi, 0, 0] * zn[ni, ci * q + qi, oi, oj]
                        o[ni, ci, oi, oj] = acc
    else:
        o = np.zeros((n, c * q, ho, wo))
        for ni in range(n):
            for ci in range(c):
                for qo in range(q):
                    for oi in range(ho):
                        for oj in range(wo):
                            acc = 0.0
                            for qi in range(q):
                                acc += (p.w_outer[ci * q + qo, qi, 0, 0]
                                        * zn[ni, ci * q + qi, oi, oj])
                            o[ni, ci * q + qo, oi, oj] = acc

    mix_in = o.shape[1]
    y = np.zeros((n, p.c_out, ho, wo))
    for ni in range(n):
        for co in range(p.c_out):
            for oi in range(ho):
                for oj in range(wo):
                    acc = float(p.b_mix[co])
                    for mi in range(mix_in):
                        acc += p.w_mix[co, mi, 0, 0] * o[ni, mi, oi, oj]
                    y[ni, co, oi, oj] = acc
    return y
