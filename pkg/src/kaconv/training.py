"""Optimizer, schedule, loss, augmentation, and the training loop.

Everything here is hand-rolled on numpy, same as the layers: AdamW with
decoupled weight decay, linear-warmup-into-cosine schedule, softmax
cross entropy with an analytic gradient, and a loop that logs one CSV
row per epoch and checkpoints after every epoch.

Determinism contract: given the same config, seed, data, and thread
count, two runs produce bitwise-identical parameters and identical CSV
logs up to the wall_seconds column. Per-epoch RNG streams are derived
from (seed, epoch), so a resumed run continues exactly the stream a
straight run would have used.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .datasets import Dataset
from .errors import ConfigError, DataError, FormatError, NumericsError
from .network import Network, net_backward, net_forward

# Parameters whose dotted name ends in one of these are biases or
# normalization affine terms; decaying them buys nothing and skews the
# normalization statistics, so AdamW skips decay for them.
DECAY_EXEMPT_LEAVES = frozenset(
    {"b", "b1", "b2", "b_mix", "beta", "gamma", "norm_gamma", "norm_beta", "act_beta"}
)


def is_decay_exempt(name: str) -> bool:
    return name.rsplit(".", 1)[-1] in DECAY_EXEMPT_LEAVES


# ---------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class AdamWConfig:
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    weight_decay: float = 1e-4

    def __post_init__(self) -> None:
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError(f"betas must be in [0, 1): {self.beta1}, {self.beta2}")
        if self.eps <= 0.0 or self.weight_decay < 0.0:
            raise ConfigError("eps must be positive, weight_decay non-negative")


class AdamW:
    """AdamW over a named parameter dict, updating arrays in place.

    Decay is decoupled: the parameter is first shrunk by (1 - lr * wd),
    then moved by the Adam step. On the very first step the Adam move
    reduces to -lr * g / (|g| + eps), which the tests pin exactly.
    """

    def __init__(self, params: dict[str, np.ndarray], config: AdamWConfig | None = None):
        self.config = config or AdamWConfig()
        self.params = params
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        c = self.config
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for name, p in self.params.items():
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise NumericsError(f"non-finite gradient for {name} at step {self.t}")
            m = self.m[name]
            v = self.v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            if c.weight_decay and not is_decay_exempt(name):
                p *= 1.0 - lr * c.weight_decay
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for name, arr in self.m.items():
            out[f"opt.m.{name}"] = arr
        for name, arr in self.v.items():
            out[f"opt.v.{name}"] = arr
        return out


# ---------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class ScheduleConfig:
    base_lr: float
    total_steps: int
    warmup_steps: int = 0
    min_lr: float = 1e-6

    def __post_init__(self) -> None:
        if self.total_steps < 1:
            raise ConfigError(f"total_steps must be >= 1, got {self.total_steps}")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ConfigError(
                f"warmup_steps {self.warmup_steps} outside [0, {self.total_steps}]"
            )
        if self.min_lr > self.base_lr:
            raise ConfigError(f"min_lr {self.min_lr} above base_lr {self.base_lr}")


def lr_at(step: int, cfg: ScheduleConfig) -> float:
    """Learning rate for the 0-based global step.

    Warmup is linear and lands on base_lr exactly at the last warmup
    step; the cosine tail lands on min_lr exactly at the last step of
    the run (pinned by an explicit branch so no trig rounding leaks in).
    """
    if not 0 <= step < cfg.total_steps:
        raise ConfigError(f"step {step} outside [0, {cfg.total_steps})")
    if step < cfg.warmup_steps:
        return cfg.base_lr * (step + 1) / cfg.warmup_steps
    if step >= cfg.total_steps - 1:
        return cfg.min_lr
    span = cfg.total_steps - 1 - cfg.warmup_steps
    progress = (step - cfg.warmup_steps) / span
    return cfg.min_lr + (cfg.base_lr - cfg.min_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


# ---------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------


@dataclass
class CrossEntropyCache:
    softmax: np.ndarray
    labels: np.ndarray


def cross_entropy_fwd(logits: np.ndarray, labels: np.ndarray) -> tuple[float, CrossEntropyCache]:
    """Mean softmax negative log likelihood over the batch."""
    if logits.ndim != 2:
        raise DataError(f"logits must be (N, classes), got {logits.shape}")
    n, classes = logits.shape
    if labels.shape != (n,):
        raise DataError(f"labels shape {labels.shape} does not match {n} logits rows")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= classes:
        raise DataError(
            f"label outside [0, {classes}): min {labels.min()}, max {labels.max()}"
        )
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    softmax = exp / exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(exp.sum(axis=1, keepdims=True))
    loss = -float(log_probs[np.arange(n), labels].mean())
    return loss, CrossEntropyCache(softmax, labels)


def cross_entropy_bwd(grad_loss: float, cache: CrossEntropyCache) -> np.ndarray:
    n = cache.softmax.shape[0]
    grad = cache.softmax.copy()
    grad[np.arange(n), cache.labels] -= 1.0
    return grad * (grad_loss / n)


# ---------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------


def random_crop(images: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Zero-pad each side by `pad`, then crop back at a random offset."""
    n, _, h, w = images.shape
    padded = np.pad(images, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    offsets = rng.integers(0, 2 * pad + 1, size=(n, 2))
    out = np.empty_like(images)
    for i in range(n):
        oy, ox = offsets[i]
        out[i] = padded[i, :, oy : oy + h, ox : ox + w]
    return out


def random_hflip(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    flips = rng.random(images.shape[0]) < 0.5
    out = images.copy()
    out[flips] = out[flips, :, :, ::-1]
    return out


def augment(images: np.ndarray, rng: np.random.Generator, flip: bool = True, pad: int = 4) -> np.ndarray:
    out = random_crop(images, rng, pad=pad)
    if flip:
        out = random_hflip(out, rng)
    return out


# ---------------------------------------------------------------------
# loop
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    batch_size: int = 128
    base_lr: float = 2e-3
    min_lr: float = 1e-6
    warmup_epochs: int = 5
    weight_decay: float = 1e-4
    seed: int = 0
    augment: bool = True
    flip: bool = True
    eval_batch_size: int = 256

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs must be non-negative")


CSV_FIELDS = ("epoch", "step", "lr", "train_loss", "eval_acc", "wall_seconds")


def _batch_index_chunks(n: int, batch_size: int, perm: np.ndarray) -> list[np.ndarray]:
    # ragged tail kept: small corpora would otherwise lose a big fraction
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def evaluate(net: Network, dataset: Dataset, batch_size: int = 256) -> float:
    """Top-1 accuracy under eval-mode forward passes."""
    correct = 0
    for start in range(0, len(dataset), batch_size):
        x = dataset.images[start : start + batch_size]
        y = dataset.labels[start : start + batch_size]
        logits, _ = net_forward(net, x, train=False)
        correct += int((logits.argmax(axis=1) == y).sum())
    return correct / len(dataset)


def collect_state(net: Network, opt: AdamW) -> dict[str, np.ndarray]:
    """Everything a resume needs, in a stable order."""
    tensors: dict[str, np.ndarray] = {}
    tensors.update(net.named_params())
    tensors.update(net.named_buffers())
    tensors.update(opt.state_tensors())
    return tensors


def restore_network(net: Network, tensors: dict[str, np.ndarray]) -> None:
    """Load params and buffers only; optimizer tensors are ignored."""
    expected = {**net.named_params(), **net.named_buffers()}
    missing = sorted(k for k in expected if k not in tensors)
    if missing:
        raise FormatError(f"checkpoint lacks tensors for this network: {missing[:3]}")
    for name, arr in expected.items():
        src = tensors[name]
        if src.shape != arr.shape:
            raise FormatError(f"{name}: checkpoint shape {src.shape} vs model {arr.shape}")
        arr[...] = src


def restore_state(net: Network, opt: AdamW, tensors: dict[str, np.ndarray]) -> None:
    expected = collect_state(net, opt)
    if set(tensors) != set(expected):
        missing = sorted(set(expected) - set(tensors))[:3]
        extra = sorted(set(tensors) - set(expected))[:3]
        raise FormatError(
            f"checkpoint does not match this network: missing {missing}, extra {extra}"
        )
    for name, arr in expected.items():
        src = tensors[name]
        if src.shape != arr.shape:
            raise FormatError(f"{name}: checkpoint shape {src.shape} vs model {arr.shape}")
        arr[...] = src  # in place, so optimizer/model aliases stay live


def train(
    net: Network,
    train_ds: Dataset,
    eval_ds: Dataset,
    cfg: TrainConfig,
    out_dir: str | Path,
    resume_from: str | Path | None = None,
) -> list[dict]:
    """Run the full loop; returns the per-epoch log rows it wrote.

    Each epoch appends one CSV row to train_log.csv and writes
    epoch_NNN.ckpt. A non-finite loss aborts with NumericsError; the
    checkpoints written so far stay on disk.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = net.named_params()
    opt = AdamW(params, AdamWConfig(weight_decay=cfg.weight_decay))

    steps_per_epoch = math.ceil(len(train_ds) / cfg.batch_size)
    schedule = ScheduleConfig(
        base_lr=cfg.base_lr,
        total_steps=steps_per_epoch * cfg.epochs,
        warmup_steps=min(steps_per_epoch * cfg.warmup_epochs, steps_per_epoch * cfg.epochs),
        min_lr=cfg.min_lr,
    )

    start_epoch = 0
    if resume_from is not None:
        tensors, meta = load_checkpoint(resume_from)
        restore_state(net, opt, tensors)
        opt.t = int(meta["opt_step"])
        start_epoch = int(meta["epoch"]) + 1
        if start_epoch >= cfg.epochs:
            raise ConfigError(
                f"resume checkpoint is at epoch {meta['epoch']} but the run "
                f"only has {cfg.epochs} epochs"
            )

    log_path = out_dir / "train_log.csv"
    mode = "a" if (resume_from is not None and log_path.exists()) else "w"
    rows: list[dict] = []
    with open(log_path, mode, newline="") as log_file:
        writer = csv.DictWriter(log_file, fieldnames=CSV_FIELDS)
        if mode == "w":
            writer.writeheader()
        for epoch in range(start_epoch, cfg.epochs):
            tic = time.perf_counter()
            rng = np.random.default_rng([cfg.seed, epoch])
            perm = rng.permutation(len(train_ds))
            losses = []
            lr = 0.0
            for idx in _batch_index_chunks(len(train_ds), cfg.batch_size, perm):
                x = train_ds.images[idx]
                y = train_ds.labels[idx]
                if cfg.augment:
                    x = augment(x, rng, flip=cfg.flip)
                logits, caches = net_forward(net, x, train=True)
                loss, loss_cache = cross_entropy_fwd(logits, y)
                if not math.isfinite(loss):
                    raise NumericsError(
                        f"loss became non-finite at epoch {epoch}, step {opt.t}; "
                        f"checkpoints so far are retained in {out_dir}"
                    )
                grad_logits = cross_entropy_bwd(1.0, loss_cache)
                _, grads = net_backward(net, grad_logits, caches)
                lr = lr_at(opt.t, schedule)
                opt.step(grads, lr)
                losses.append(loss)
            row = {
                "epoch": epoch,
                "step": opt.t,
                "lr": f"{lr:.10g}",
                "train_loss": f"{float(np.mean(losses)):.10g}",
                "eval_acc": f"{evaluate(net, eval_ds, cfg.eval_batch_size):.6f}",
                "wall_seconds": f"{time.perf_counter() - tic:.3f}",
            }
            writer.writerow(row)
            log_file.flush()
            save_checkpoint(
                out_dir / f"epoch_{epoch:03d}.ckpt",
                collect_state(net, opt),
                {"config": asdict(cfg), "epoch": epoch, "seed": cfg.seed, "opt_step": opt.t},
            )
            rows.append(row)
    return rows
