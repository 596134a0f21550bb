"""Wall-clock comparison of activation families at a fixed layer shape.

Times eval-mode forward passes of the layer with each activation family
plus a plain dense convolution of matching channel counts. Medians, not
means: a single scheduler hiccup should not move the headline number.
The FLOPs column comes from the same counting functions the summary
command uses, so the two always agree.

Large batches can be split into chunks to bound peak memory; the
reported latency is the time for the whole batch regardless of
chunking.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .kaconv import KAConvParams, kaconv_layer_fwd, standard_conv_flops
from .network import KALayer
from .precision import default_dtype
from .tensor_ops import ConvSpec, conv2d_grouped_fwd


@dataclass(frozen=True)
class BenchConfig:
    batch: int = 32
    channels: int = 256
    hw: int = 64
    kernel: int = 3
    iters: int = 30
    warmup: int = 5
    chunk: int | None = None  # max samples per forward; None = whole batch

    def __post_init__(self) -> None:
        if self.iters < 1:
            raise ConfigError(f"iters must be >= 1, got {self.iters}")
        if self.warmup < 0:
            raise ConfigError(f"warmup must be >= 0, got {self.warmup}")
        if self.batch < 1 or self.channels < 1 or self.hw < 1:
            raise ConfigError("batch, channels, hw must all be positive")
        if self.chunk is not None and self.chunk < 1:
            raise ConfigError(f"chunk must be >= 1, got {self.chunk}")


@dataclass(frozen=True)
class BenchRow:
    name: str
    median_s: float
    p95_s: float
    iters: int
    flops: int


def time_fn(fn, iters: int, warmup: int) -> list[float]:
    """perf_counter laps for `iters` calls after `warmup` unrecorded ones."""
    if iters < 1:
        raise ConfigError(f"iters must be >= 1, got {iters}")
    for _ in range(warmup):
        fn()
    laps = []
    for _ in range(iters):
        tic = time.perf_counter()
        fn()
        laps.append(time.perf_counter() - tic)
    return laps


def _summarize(name: str, laps: list[float], flops: int) -> BenchRow:
    return BenchRow(
        name=name,
        median_s=float(np.median(laps)),
        p95_s=float(np.percentile(laps, 95)),
        iters=len(laps),
        flops=flops,
    )


def _chunks(x: np.ndarray, chunk: int | None):
    if chunk is None:
        yield x
        return
    for start in range(0, x.shape[0], chunk):
        yield x[start : start + chunk]


def bench_suite(cfg: BenchConfig, seed: int = 0) -> list[BenchRow]:
    """Three rows: layer with each activation family, then a dense conv."""
    rng = np.random.default_rng(seed)
    dtype = default_dtype()
    c, hw = cfg.channels, cfg.hw
    x = rng.standard_normal((cfg.batch, c, hw, hw)).astype(dtype)

    rows = []
    for family in ("glinear", "bspline"):
        p = KAConvParams.init(c, c, k=cfg.kernel, act_family=family,
                              rng=rng, dtype=dtype)
        layer = KALayer(p)

        def fwd(p=p):
            for part in _chunks(x, cfg.chunk):
                kaconv_layer_fwd(part, p, train=False)

        laps = time_fn(fwd, cfg.iters, cfg.warmup)
        rows.append(_summarize(f"kaconv-{family}", laps,
                               layer.flops((c, hw, hw))[0]))

    spec = ConvSpec(cfg.kernel, 1, cfg.kernel // 2, 1)
    w = rng.standard_normal((c, c, cfg.kernel, cfg.kernel)).astype(dtype)

    def conv_fwd():
        for part in _chunks(x, cfg.chunk):
            conv2d_grouped_fwd(part, w, None, spec)

    laps = time_fn(conv_fwd, cfg.iters, cfg.warmup)
    ho, wo = spec.out_hw(hw, hw)
    rows.append(_summarize("standard-conv", laps,
                           standard_conv_flops(c, c, cfg.kernel, ho, wo)))
    return rows


def rows_to_csv(rows: list[BenchRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["name", "median_s", "p95_s", "iters", "flops"])
    for r in rows:
        writer.writerow([r.name, f"{r.median_s:.6f}", f"{r.p95_s:.6f}",
                         r.iters, r.flops])
    return buf.getvalue()
