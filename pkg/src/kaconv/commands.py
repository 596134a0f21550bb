"""Implementations behind the CLI subcommands.

cli.py owns argument parsing and thread-environment setup and must stay
numpy-free; everything heavy lives here. Each cmd_* returns a process
exit code. Config resolution is strictly layered: dataclass defaults,
then the JSON config file, then explicit command-line flags.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bench import BenchConfig, bench_suite, rows_to_csv
from .checkpoint import load_checkpoint
from .datasets import Dataset, load_cifar, load_mnist
from .errors import ConfigError, KaconvError
from .gradcheck import THRESHOLD, run_gradcheck
from .network import (
    NetworkConfig,
    VggAblationConfig,
    build_kaconvnet,
    build_kavgg11,
    count_flops,
    count_params,
)
from .training import TrainConfig, evaluate, restore_network, train

_CONFIG_DIR = Path(__file__).parent / "configs"


@dataclass(frozen=True)
class RunConfig:
    """Resolved invocation: subcommand plus the shared flags."""

    subcommand: str
    config: str | None
    data: str | None
    out: str
    seed: int
    threads: int | None
    f32: bool
    checkpoint: str | None = None
    resume: str | None = None


def available_presets() -> list[str]:
    return sorted(p.stem for p in _CONFIG_DIR.glob("*.json"))


def load_config_dict(name_or_path: str | None) -> dict:
    """Resolve --config: an existing file path, or a named preset."""
    if name_or_path is None:
        return {}
    path = Path(name_or_path)
    if not path.exists():
        path = _CONFIG_DIR / f"{name_or_path}.json"
    if not path.exists():
        raise ConfigError(
            f"config {name_or_path!r} is neither a file nor a preset; "
            f"presets: {', '.join(available_presets())}"
        )
    try:
        loaded = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(loaded, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return loaded


def _dataclass_from(cls, section: dict, context: str):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"{context}: unknown keys {unknown}; allowed: {sorted(allowed)}")
    coerced = {
        k: tuple(v) if isinstance(v, list) else v for k, v in section.items()
    }
    return cls(**coerced)


def network_from_config(cfg_dict: dict) -> NetworkConfig:
    return _dataclass_from(NetworkConfig, cfg_dict.get("network", {}), "network")


def train_config_from(cfg_dict: dict, seed: int) -> TrainConfig:
    section = dict(cfg_dict.get("train", {}))
    section["seed"] = seed
    return _dataclass_from(TrainConfig, section, "train")


def _load_dataset(cfg_dict: dict, run: RunConfig) -> tuple[Dataset, Dataset]:
    name = cfg_dict.get("dataset", "cifar10")
    data_dir = Path(run.data) if run.data else Path("data") / name
    if name == "mnist":
        return load_mnist(data_dir)
    if name == "cifar10":
        return load_cifar(data_dir)
    raise ConfigError(f"unknown dataset {name!r}; use 'mnist' or 'cifar10'")


def _build_net(cfg_dict: dict, seed: int):
    net_cfg = network_from_config(cfg_dict)
    return build_kaconvnet(net_cfg, seed=seed)


# ---------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------


def cmd_train(run: RunConfig) -> int:
    cfg_dict = load_config_dict(run.config)
    train_ds, eval_ds = _load_dataset(cfg_dict, run)
    net = _build_net(cfg_dict, run.seed)
    tcfg = train_config_from(cfg_dict, run.seed)
    rows = train(net, train_ds, eval_ds, tcfg, run.out, resume_from=run.resume)
    last = rows[-1]
    print(f"done: epoch {last['epoch']} train_loss {last['train_loss']} "
          f"eval_acc {last['eval_acc']} (log: {Path(run.out) / 'train_log.csv'})")
    return 0


def cmd_eval(run: RunConfig) -> int:
    cfg_dict = load_config_dict(run.config)
    _, eval_ds = _load_dataset(cfg_dict, run)
    net = _build_net(cfg_dict, run.seed)
    if run.checkpoint is not None:
        tensors, meta = load_checkpoint(run.checkpoint)
        restore_network(net, tensors)
        print(f"restored {run.checkpoint} (epoch {meta.get('epoch')})")
    acc = evaluate(net, eval_ds)
    print(f"eval_acc {acc:.4f} on {len(eval_ds)} samples")
    return 0


def summary_rows(cfg_dict: dict, seed: int) -> tuple[list[tuple], int, int]:
    """(per-layer rows, total params, total MACs) at the config input size."""
    net = _build_net(cfg_dict, seed)
    net_cfg = net.config
    hw = int(cfg_dict.get("input_hw", 224))
    shape = (net_cfg.in_channels, hw, hw)
    rows = []
    total_macs = 0
    for name, layer in net.layers:
        params = sum(a.size for a in layer.named_params().values())
        macs, shape = layer.flops(shape)
        rows.append((name, params, macs))
        total_macs += macs
    return rows, count_params(net), total_macs


def cmd_summary(run: RunConfig) -> int:
    cfg_dict = load_config_dict(run.config)
    rows, total_params, total_macs = summary_rows(cfg_dict, run.seed)
    width = max(len(name) for name, _, _ in rows) + 2
    print(f"{'layer':<{width}}{'params':>12}{'MACs':>16}")
    for name, params, macs in rows:
        print(f"{name:<{width}}{params:>12,}{macs:>16,}")
    print(f"{'total':<{width}}{total_params:>12,}{total_macs:>16,}")
    return 0


def cmd_gradcheck(run: RunConfig) -> int:
    rows = run_gradcheck(seed=run.seed)
    width = max(len(r.name) for r in rows) + 2
    failed = []
    for r in rows:
        status = "ok" if r.passed() else "FAIL"
        print(f"{r.name:<{width}}{r.rel_err:12.3e}  {status}")
        if not r.passed():
            failed.append(r)
    worst = max(rows, key=lambda r: r.rel_err)
    print(f"worst: {worst.name} {worst.rel_err:.3e} (threshold {THRESHOLD:g})")
    return 1 if failed else 0


def cmd_bench(run: RunConfig) -> int:
    cfg_dict = load_config_dict(run.config)
    bcfg = _dataclass_from(BenchConfig, cfg_dict.get("bench", {}), "bench")
    rows = bench_suite(bcfg, seed=run.seed)
    text = rows_to_csv(rows)
    out_path = Path(run.out) / "bench.csv"
    out_path.write_text(text)
    print(text, end="")
    print(f"written: {out_path}")
    return 0


def _subset(ds: Dataset, count: int | None, seed: int) -> Dataset:
    if count is None or count >= len(ds):
        return ds
    idx = np.random.default_rng([seed, len(ds)]).permutation(len(ds))[:count]
    return Dataset(ds.name, ds.images[idx], ds.labels[idx], ds.num_classes)


def cmd_ablate(run: RunConfig) -> int:
    cfg_dict = load_config_dict(run.config)
    section = dict(cfg_dict.get("ablate", {}))
    families = section.get("families", ["glinear"])
    n_values = section.get("glinear_n", [2])
    masks = section.get("layer_masks", [list(range(1, 9))])
    max_cells = int(section.get("max_cells", 8))
    cells = [(f, n, tuple(m)) for f in families for n in n_values for m in masks]
    if len(cells) > max_cells:
        raise ConfigError(
            f"ablation grid has {len(families)} families x {len(n_values)} n "
            f"x {len(masks)} masks = {len(cells)} cells; the budget allows "
            f"{max_cells}. Shrink the grid or raise max_cells."
        )

    train_ds, eval_ds = _load_dataset(cfg_dict, run)
    train_ds = _subset(train_ds, section.get("train_subset"), run.seed)
    eval_ds = _subset(eval_ds, section.get("eval_subset"), run.seed)

    out_dir = Path(run.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for idx, (family, n, mask) in enumerate(cells):
        # deterministic and distinct per cell, stable under reordering of runs
        cell_seed = run.seed * 1000 + idx
        vcfg = VggAblationConfig(
            ka_layer_set=mask,
            activation_family=family,
            glinear_n=n,
            num_classes=train_ds.num_classes,
        )
        net = build_kavgg11(vcfg, seed=cell_seed)
        tcfg = TrainConfig(
            epochs=int(section.get("epochs", 5)),
            batch_size=int(section.get("batch_size", 64)),
            base_lr=float(section.get("base_lr", 2e-3)),
            warmup_epochs=int(section.get("warmup_epochs", 1)),
            seed=cell_seed,
        )
        rows = train(net, train_ds, eval_ds, tcfg, out_dir / f"cell_{idx}")
        results.append({
            "method": f"kavgg11-{family}" if mask else "vgg11",
            "n": n if family == "glinear" else "",
            "acc": rows[-1]["eval_acc"],
            "params": count_params(net),
            "flops": count_flops(net, (3, 32, 32)),
        })
        print(f"cell {idx}: {results[-1]}")

    csv_path = out_dir / "ablate.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["method", "n", "acc", "params", "flops"])
        writer.writeheader()
        writer.writerows(results)
    print(f"written: {csv_path}")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "summary": cmd_summary,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
    "ablate": cmd_ablate,
}


def dispatch(run: RunConfig) -> int:
    Path(run.out).mkdir(parents=True, exist_ok=True)
    try:
        return _COMMANDS[run.subcommand](run)
    except KaconvError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
