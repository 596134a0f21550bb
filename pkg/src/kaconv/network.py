"""Network assembly: blocks, stems, transitions, full models, audits.

A network is an ordered list of layers sharing one small interface:
``forward(x, train) -> (y, cache)``, ``backward(grad_y, cache) ->
(grad_x, grads_by_name)``, ``named_params()``, and ``flops(shape) ->
(macs, out_shape)``. Shapes in the cost accounting are per-image
(C, H, W); MAC conventions follow the layer formulas (conv kernels and
matmuls only for standard layers, the full breakdown for KA layers).

The classifier nets come in two families:

* KAConvNet: Stem (4x downsample) -> four residual stages with
  transitions between -> global average pool -> linear head. Each stage
  block is ``x + SE(inner(x))`` where inner is a KA convolution layer,
  or a standard 3x3 conv for masked stages.
* VGG-11 with any subset of its eight conv layers replaced by KA
  convolution layers (the replacement drops the conv's norm/ReLU pair,
  since the KA layer normalizes internally).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .activations import sigmoid, silu, silu_bwd
from .errors import ConfigError, ContractError, DimensionError
from .kaconv import KAConvParams, kaconv_flops, kaconv_layer_bwd, kaconv_layer_fwd
from .tensor_ops import (
    ConvSpec,
    batchnorm_bwd,
    batchnorm_fwd,
    conv2d_grouped_bwd,
    conv2d_grouped_fwd,
    global_avg_pool_bwd,
    global_avg_pool_fwd,
    linear_bwd,
    linear_fwd,
    maxpool_bwd,
    maxpool_fwd,
)

__all__ = [
    "NetworkConfig",
    "VggAblationConfig",
    "Network",
    "KALayer",
    "ConvBNAct",
    "SEBlock",
    "ResidualBlock",
    "MaxPool",
    "GlobalAvgPool",
    "Flatten",
    "Linear",
    "ReLU",
    "build_stem",
    "build_transition",
    "build_kaconvnet",
    "build_kavgg11",
    "count_params",
    "count_flops",
    "net_forward",
    "net_backward",
]


def _uniform_fan_in(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _kaiming(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


# ---------------------------------------------------------------------
# layer classes
# ---------------------------------------------------------------------

class KALayer:
    """Thin layer wrapper around one KAConvParams."""

    def __init__(self, params: KAConvParams):
        self.params = params

    def named_params(self):
        return self.params.named_params()

    def named_buffers(self):
        return self.params.named_buffers()

    def forward(self, x, train):
        return kaconv_layer_fwd(x, self.params, train=train)

    def backward(self, grad_y, cache):
        gx, grads = kaconv_layer_bwd(grad_y, cache)
        return gx, grads.by_name

    def flops(self, shape):
        c, h, w = shape
        if c != self.params.c_in:
            raise DimensionError(f"expected {self.params.c_in} channels, got {c}")
        f = kaconv_flops(self.params, h, w)
        return f.total, (self.params.c_out, *f.out_hw)


class ConvBNAct:
    """Standard conv, optional batchnorm, optional activation.

    act: "silu", "relu", or None. Without norm the conv carries a bias.
    """

    def __init__(self, c_in, c_out, k, stride=1, padding=None, groups=1,
                 norm=True, act="silu", rng=None, dtype=np.float64):
        if rng is None:
            rng = np.random.default_rng(0)
        if padding is None:
            padding = k // 2
        if act not in ("silu", "relu", None):
            raise ConfigError(f"unknown act {act!r}")
        self.spec = ConvSpec(k, stride, padding, groups)
        self.c_in, self.c_out, self.act = c_in, c_out, act
        self.norm = norm
        fan = (c_in // groups) * k * k
        self.w = _kaiming(rng, (c_out, c_in // groups, k, k), fan, dtype)
        self.b = None if norm else np.zeros(c_out, dtype=dtype)
        if norm:
            self.gamma = np.ones(c_out, dtype=dtype)
            self.beta = np.zeros(c_out, dtype=dtype)
            self.running_mean = np.zeros(c_out, dtype=dtype)
            self.running_var = np.ones(c_out, dtype=dtype)

    def named_params(self):
        out = {"w": self.w}
        if self.b is not None:
            out["b"] = self.b
        if self.norm:
            out.update({"gamma": self.gamma, "beta": self.beta})
        return out

    def named_buffers(self):
        if not self.norm:
            return {}
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, train):
        y, conv_cache = conv2d_grouped_fwd(x, self.w, self.b, self.spec)
        bn_cache = None
        if self.norm:
            y, bn_cache, nm, nv = batchnorm_fwd(
                y, self.gamma, self.beta, self.running_mean, self.running_var, train)
            if train:
                self.running_mean[:] = nm
                self.running_var[:] = nv
        pre_act = y
        if self.act == "silu":
            y = silu(y)
        elif self.act == "relu":
            y = np.maximum(y, 0.0)
        return y, (conv_cache, bn_cache, pre_act)

    def backward(self, grad_y, cache):
        conv_cache, bn_cache, pre_act = cache
        g = grad_y
        if self.act == "silu":
            g = silu_bwd(g, pre_act)
        elif self.act == "relu":
            g = np.where(pre_act > 0, g, 0.0)
        grads = {}
        if self.norm:
            g, grads["gamma"], grads["beta"] = batchnorm_bwd(g, bn_cache)
        gx, gw, gb = conv2d_grouped_bwd(g, conv_cache)
        grads["w"] = gw
        if self.b is not None:
            grads["b"] = gb
        return gx, grads

    def flops(self, shape):
        c, h, w = shape
        if c != self.c_in:
            raise DimensionError(f"expected {self.c_in} channels, got {c}")
        ho, wo = self.spec.out_hw(h, w)
        macs = ho * wo * self.c_out * (self.c_in // self.spec.groups) \
            * self.spec.kernel * self.spec.kernel
        return macs, (self.c_out, ho, wo)


class SEBlock:
    """Channel attention: GAP -> bottleneck MLP -> sigmoid gate -> scale."""

    def __init__(self, channels, reduction=16, rng=None, dtype=np.float64):
        if channels % reduction:
            raise ConfigError(
                f"channels {channels} not divisible by reduction {reduction}")
        if rng is None:
            rng = np.random.default_rng(0)
        hidden = channels // reduction
        self.channels, self.hidden = channels, hidden
        self.w1 = _uniform_fan_in(rng, (hidden, channels), channels, dtype)
        self.b1 = np.zeros(hidden, dtype=dtype)
        self.w2 = _uniform_fan_in(rng, (channels, hidden), hidden, dtype)
        self.b2 = np.zeros(channels, dtype=dtype)

    def named_params(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def named_buffers(self):
        return {}

    def forward(self, x, train):
        if x.shape[1] != self.channels:
            raise DimensionError(f"expected {self.channels} channels, got {x.shape}")
        pooled, gap_cache = global_avg_pool_fwd(x)
        s = pooled.reshape(x.shape[0], self.channels)
        h1, l1_cache = linear_fwd(s, self.w1, self.b1)
        hr = np.maximum(h1, 0.0)
        h2, l2_cache = linear_fwd(hr, self.w2, self.b2)
        gate = sigmoid(h2).reshape(x.shape[0], self.channels, 1, 1)
        y = x * gate
        return y, (x, gap_cache, l1_cache, h1, l2_cache, gate)

    def backward(self, grad_y, cache):
        x, gap_cache, l1_cache, h1, l2_cache, gate = cache
        gx_direct = grad_y * gate
        g_gate = (grad_y * x).sum(axis=(2, 3))
        sig = gate.reshape(g_gate.shape)
        g_h2 = g_gate * sig * (1.0 - sig)
        g_hr, gw2, gb2 = linear_bwd(g_h2, l2_cache)
        g_h1 = np.where(h1 > 0, g_hr, 0.0)
        g_s, gw1, gb1 = linear_bwd(g_h1, l1_cache)
        gx_pool = global_avg_pool_bwd(
            g_s.reshape(x.shape[0], self.channels, 1, 1), gap_cache)
        grads = {"w1": gw1, "b1": gb1, "w2": gw2, "b2": gb2}
        return gx_direct + gx_pool, grads

    def flops(self, shape):
        c, h, w = shape
        macs = 2 * c * self.hidden  # the two bottleneck matmuls, per image
        return macs, shape


class ResidualBlock:
    """y = x + SE(inner(x)); inner must preserve shape."""

    def __init__(self, inner, se: SEBlock):
        self.inner = inner
        self.se = se

    def named_params(self):
        out = {f"inner.{k}": v for k, v in self.inner.named_params().items()}
        out.update({f"se.{k}": v for k, v in self.se.named_params().items()})
        return out

    def named_buffers(self):
        return {f"inner.{k}": v for k, v in self.inner.named_buffers().items()}

    def forward(self, x, train):
        z, inner_cache = self.inner.forward(x, train)
        if z.shape != x.shape:
            raise ConfigError(
                f"residual branch changed shape {x.shape} -> {z.shape}")
        s, se_cache = self.se.forward(z, train)
        return x + s, (inner_cache, se_cache)

    def backward(self, grad_y, cache):
        inner_cache, se_cache = cache
        g_s, se_grads = self.se.backward(grad_y, se_cache)
        g_x_branch, inner_grads = self.inner.backward(g_s, inner_cache)
        grads = {f"inner.{k}": v for k, v in inner_grads.items()}
        grads.update({f"se.{k}": v for k, v in se_grads.items()})
        return grad_y + g_x_branch, grads

    def flops(self, shape):
        macs, out = self.inner.flops(shape)
        se_macs, _ = self.se.flops(out)
        return macs + se_macs, out


class MaxPool:
    def __init__(self, kernel=2, stride=2):
        self.kernel, self.stride = kernel, stride

    def named_params(self):
        return {}

    def named_buffers(self):
        return {}

    def forward(self, x, train):
        return maxpool_fwd(x, self.kernel, self.stride)

    def backward(self, grad_y, cache):
        return maxpool_bwd(grad_y, cache), {}

    def flops(self, shape):
        c, h, w = shape
        ho = (h - self.kernel) // self.stride + 1
        wo = (w - self.kernel) // self.stride + 1
        return 0, (c, ho, wo)


class GlobalAvgPool:
    def named_params(self):
        return {}

    def named_buffers(self):
        return {}

    def forward(self, x, train):
        return global_avg_pool_fwd(x)

    def backward(self, grad_y, cache):
        return global_avg_pool_bwd(grad_y, cache), {}

    def flops(self, shape):
        c, _, _ = shape
        return 0, (c, 1, 1)


class Flatten:
    def named_params(self):
        return {}

    def named_buffers(self):
        return {}

    def forward(self, x, train):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad_y, cache):
        return grad_y.reshape(cache), {}

    def flops(self, shape):
        return 0, (int(np.prod(shape)),)


class Linear:
    def __init__(self, in_f, out_f, rng=None, dtype=np.float64):
        if rng is None:
            rng = np.random.default_rng(0)
        self.in_f, self.out_f = in_f, out_f
        self.w = _uniform_fan_in(rng, (out_f, in_f), in_f, dtype)
        self.b = np.zeros(out_f, dtype=dtype)

    def named_params(self):
        return {"w": self.w, "b": self.b}

    def named_buffers(self):
        return {}

    def forward(self, x, train):
        return linear_fwd(x, self.w, self.b)

    def backward(self, grad_y, cache):
        gx, gw, gb = linear_bwd(grad_y, cache)
        return gx, {"w": gw, "b": gb}

    def flops(self, shape):
        return self.in_f * self.out_f, (self.out_f,)


class ReLU:
    def named_params(self):
        return {}

    def named_buffers(self):
        return {}

    def forward(self, x, train):
        return np.maximum(x, 0.0), x

    def backward(self, grad_y, cache):
        return np.where(cache > 0, grad_y, 0.0), {}

    def flops(self, shape):
        return 0, shape


# ---------------------------------------------------------------------
# configs
# ---------------------------------------------------------------------

@dataclass
class NetworkConfig:
    """Shape of one classifier net: four stages of residual blocks.

    stage_ka_mask selects per stage whether blocks use KA convolution
    layers or standard 3x3 convs; when every entry is false the stem's
    KA layer is converted too, so the net holds no learnable-activation
    parameters at all.
    """

    blocks: tuple = (1, 1, 3, 1)
    channels: tuple = (32, 64, 128, 256)
    ka_kernel: int = 3
    num_classes: int = 1000
    stage_ka_mask: tuple = (True, True, True, True)
    se_reduction: int = 16
    in_channels: int = 3
    outer_mode: str = "wide"
    product_mode: str = "post_sum"
    act_family: str = "glinear"

    def __post_init__(self):
        self.blocks = tuple(self.blocks)
        self.channels = tuple(self.channels)
        self.stage_ka_mask = tuple(bool(m) for m in self.stage_ka_mask)
        if len(self.blocks) != 4 or len(self.channels) != 4:
            raise ConfigError("blocks and channels must each have 4 entries")
        if any(b < 1 for b in self.blocks) or any(c < 1 for c in self.channels):
            raise ConfigError("blocks and channels entries must be >= 1")
        if len(self.stage_ka_mask) != 4:
            raise ConfigError("stage_ka_mask must have 4 entries")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")


VGG11_PLAN = ((64,), (128,), (256, 256), (512, 512), (512, 512))


@dataclass
class VggAblationConfig:
    """VGG-11 with a subset of its 8 conv layers swapped for KA layers."""

    ka_layer_set: tuple = ()
    activation_family: str = "glinear"
    glinear_n: int = 2
    num_classes: int = 100
    in_channels: int = 3

    def __post_init__(self):
        self.ka_layer_set = tuple(sorted(self.ka_layer_set))
        if len(set(self.ka_layer_set)) != len(self.ka_layer_set):
            raise ConfigError("ka_layer_set indices must be distinct")
        if any(i < 1 or i > 8 for i in self.ka_layer_set):
            raise ConfigError("ka_layer_set indices must be in 1..8")
        if self.activation_family not in ("glinear", "prelu", "bspline"):
            raise ConfigError(
                f"unknown activation_family {self.activation_family!r}")
        if self.glinear_n < 1:
            raise ConfigError("glinear_n must be >= 1")


# ---------------------------------------------------------------------
# the network container
# ---------------------------------------------------------------------

@dataclass
class Network:
    layers: list  # of (name, layer)
    config: object = None

    def named_params(self):
        out = {}
        for name, layer in self.layers:
            for pname, arr in layer.named_params().items():
                out[f"{name}.{pname}"] = arr
        return out

    def named_buffers(self):
        out = {}
        for name, layer in self.layers:
            for bname, arr in layer.named_buffers().items():
                out[f"{name}.{bname}"] = arr
        return out

    def forward(self, x, train=False):
        caches = []
        for idx, (name, layer) in enumerate(self.layers):
            try:
                x, cache = layer.forward(x, train)
            except (DimensionError, ConfigError) as e:
                raise DimensionError(f"layer {idx} ({name}): {e}") from e
            caches.append(cache)
        return x, caches

    def backward(self, grad_y, caches):
        if len(caches) != len(self.layers):
            raise ContractError("cache list does not match layer count")
        grads = {}
        g = grad_y
        for (name, layer), cache in zip(reversed(self.layers), reversed(caches)):
            g, layer_grads = layer.backward(g, cache)
            for pname, arr in layer_grads.items():
                grads[f"{name}.{pname}"] = arr
        return g, grads


def net_forward(net: Network, x, train=False):
    return net.forward(x, train)


def net_backward(net: Network, grad_y, caches):
    return net.backward(grad_y, caches)


def count_params(net: Network) -> int:
    return sum(a.size for a in net.named_params().values())


def count_flops(net: Network, input_shape) -> int:
    """Total per-image MACs for the given (C, H, W) input."""
    shape = tuple(input_shape)
    total = 0
    for name, layer in net.layers:
        macs, shape = layer.flops(shape)
        total += macs
    return total


# ---------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------

def _ka_layer(c_in, c_out, cfg: NetworkConfig, rng, k=None, stride=1):
    k = cfg.ka_kernel if k is None else k
    return KALayer(KAConvParams.init(
        c_in, c_out, k=k, stride=stride, padding=k // 2,
        outer_mode=cfg.outer_mode, product_mode=cfg.product_mode,
        act_family=cfg.act_family, rng=rng))


def build_stem(cfg: NetworkConfig, rng) -> list:
    """4x downsampler: KA layer stride 2, then DW 3x3, 1x1, DW 3x3 stride 2.

    With an all-false stage mask the leading KA layer becomes a plain
    conv so the net is entirely standard.
    """
    c1 = cfg.channels[0]
    if any(cfg.stage_ka_mask):
        first = ("stem.ka", _ka_layer(cfg.in_channels, c1, cfg, rng, stride=2))
    else:
        first = ("stem.conv", ConvBNAct(cfg.in_channels, c1, k=3, stride=2,
                                        rng=rng))
    return [
        first,
        ("stem.dw1", ConvBNAct(c1, c1, k=3, stride=1, groups=c1, rng=rng)),
        ("stem.pw", ConvBNAct(c1, c1, k=1, rng=rng)),
        ("stem.dw2", ConvBNAct(c1, c1, k=3, stride=2, groups=c1, rng=rng)),
    ]


def build_transition(c_in, c_out, tag, rng) -> list:
    """Channel raise then 2x downsample."""
    return [
        (f"{tag}.pw", ConvBNAct(c_in, c_out, k=1, rng=rng)),
        (f"{tag}.dw", ConvBNAct(c_out, c_out, k=3, stride=2, groups=c_out,
                                rng=rng)),
    ]


def _stage_block(c, cfg: NetworkConfig, use_ka, rng):
    if use_ka:
        inner = _ka_layer(c, c, cfg, rng)
    else:
        inner = ConvBNAct(c, c, k=3, rng=rng)
    return ResidualBlock(inner, SEBlock(c, cfg.se_reduction, rng=rng))


def build_kaconvnet(cfg: NetworkConfig, seed: int = 0) -> Network:
    rng = np.random.default_rng(seed)
    layers = build_stem(cfg, rng)
    for si in range(4):
        c = cfg.channels[si]
        for bi in range(cfg.blocks[si]):
            layers.append((f"s{si + 1}.b{bi + 1}",
                           _stage_block(c, cfg, cfg.stage_ka_mask[si], rng)))
        if si < 3:
            layers.extend(build_transition(c, cfg.channels[si + 1],
                                           f"t{si + 1}", rng))
    layers.append(("pool", GlobalAvgPool()))
    layers.append(("flatten", Flatten()))
    layers.append(("head", Linear(cfg.channels[3], cfg.num_classes, rng=rng)))
    return Network(layers=layers, config=cfg)


def build_kavgg11(cfg: VggAblationConfig, seed: int = 0) -> Network:
    """VGG-11 (8 convs, 5 maxpools, 4096-wide classifier), with the
    selected conv indices replaced by KA convolution layers."""
    from .activations import GLinearParams

    rng = np.random.default_rng(seed)
    layers = []
    c_in = cfg.in_channels
    conv_idx = 0
    for gi, group in enumerate(VGG11_PLAN):
        for c_out in group:
            conv_idx += 1
            if conv_idx in cfg.ka_layer_set:
                p = KAConvParams.init(
                    c_in, c_out, k=3, stride=1, padding=1, outer_mode="wide",
                    act_family=cfg.activation_family, rng=rng)
                if cfg.activation_family == "glinear" and cfg.glinear_n != 1:
                    grid = np.linspace(-1.0, 1.0, cfg.glinear_n)
                    p.act = GLinearParams.identity(c_in, grid=grid)
                layers.append((f"conv{conv_idx}.ka", KALayer(p)))
            else:
                layers.append((f"conv{conv_idx}",
                               ConvBNAct(c_in, c_out, k=3, act="relu", rng=rng)))
            c_in = c_out
        layers.append((f"pool{gi + 1}", MaxPool()))
    layers.append(("flatten", Flatten()))
    layers.append(("fc1", Linear(512, 4096, rng=rng)))
    layers.append(("fc1.relu", ReLU()))
    layers.append(("fc2", Linear(4096, 4096, rng=rng)))
    layers.append(("fc2.relu", ReLU()))
    layers.append(("head", Linear(4096, cfg.num_classes, rng=rng)))
    return Network(layers=layers, config=cfg)
