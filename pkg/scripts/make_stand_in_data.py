#!/usr/bin/env python3
"""Populate data/ with stand-in corpora where the real files are absent.

Usage: python3 scripts/make_stand_in_data.py [--root data] [--which all|mnist|cifar10]

Real files already in place are left untouched, so dropping the actual
IDX / binary-batch downloads into data/mnist and data/cifar10 makes
everything downstream use them instead.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from kaconv.standin import ensure_cifar, ensure_mnist  # noqa: E402


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--root", default="data")
    parser.add_argument("--which", default="all", choices=("all", "mnist", "cifar10"))
    args = parser.parse_args()
    root = Path(args.root)

    if args.which in ("all", "mnist"):
        real = ensure_mnist(root / "mnist")
        print(f"mnist: {'real files present' if real else 'stand-in written'} "
              f"({root / 'mnist'})")
    if args.which in ("all", "cifar10"):
        real = ensure_cifar(root / "cifar10")
        print(f"cifar10: {'real files present' if real else 'stand-in written'} "
              f"({root / 'cifar10'})")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
