"""Argument parsing and process setup for the `kaconv` executable.

Nothing in this module may import numpy, directly or transitively:
--threads (and the KACONV_THREADS fallback) work by exporting the BLAS
thread-count variables, and those are only read when the BLAS library
first loads. The numpy-facing half of the CLI lives in commands.py and
is imported only after the environment is set.
"""

from __future__ import annotations

import argparse
import os
import sys

# Fixed default so two people running the same command get the same run.
DEFAULT_SEED = 1234

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _resolve_threads(flag_value: int | None) -> int | None:
    if flag_value is not None:
        return flag_value
    env = os.environ.get("KACONV_THREADS")
    if env is None:
        return None
    try:
        return int(env)
    except ValueError:
        raise SystemExit(f"KACONV_THREADS={env!r} is not an integer")


def _apply_thread_env(threads: int | None) -> None:
    if threads is None:
        return
    if threads < 1:
        raise SystemExit(f"--threads must be >= 1, got {threads}")
    if "numpy" in sys.modules:
        # too late for env vars to matter; refuse to pretend otherwise
        raise SystemExit(
            "numpy was imported before thread setup; run the CLI as its "
            "own process to use --threads"
        )
    for var in _THREAD_VARS:
        os.environ[var] = str(threads)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kaconv",
        description="Train, audit, and benchmark Kolmogorov-Arnold "
                    "convolution networks.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_common(p):
        p.add_argument("--config", help="config file path or preset name")
        p.add_argument("--data", help="dataset directory (default: data/<dataset>)")
        p.add_argument("--out", default="runs/out", help="output directory")
        p.add_argument("--seed", type=int, default=DEFAULT_SEED)
        p.add_argument("--threads", type=int,
                       help="BLAS thread count (env fallback: KACONV_THREADS)")
        p.add_argument("--f32", action="store_true",
                       help="run in float32 instead of float64")

    p_train = sub.add_parser("train", help="train a network, logging CSV + checkpoints")
    add_common(p_train)
    p_train.add_argument("--resume", help="checkpoint to continue from")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint (or a fresh net)")
    add_common(p_eval)
    p_eval.add_argument("--checkpoint", help="checkpoint to restore before eval")

    for name, help_text in (
        ("summary", "per-layer and total params/MACs for a config"),
        ("gradcheck", "finite-difference audit of every backward pass"),
        ("bench", "latency comparison of activation families"),
        ("ablate", "grid of short training runs, Table-style CSV out"),
    ):
        add_common(sub.add_parser(name, help=help_text))

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _apply_thread_env(_resolve_threads(args.threads))

    # safe to get heavy now
    from .commands import RunConfig, dispatch
    from .precision import set_default_dtype

    if args.f32:
        set_default_dtype("float32")
    run = RunConfig(
        subcommand=args.subcommand,
        config=args.config,
        data=args.data,
        out=args.out,
        seed=args.seed,
        threads=args.threads,
        f32=args.f32,
        checkpoint=getattr(args, "checkpoint", None),
        resume=getattr(args, "resume", None),
    )
    return dispatch(run)


if __name__ == "__main__":
    raise SystemExit(main())
