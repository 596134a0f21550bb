#!/usr/bin/env python3
"""Print the parameter / MAC audit for every bundled network preset.

Usage: python3 scripts/audit_tables.py [--preset NAME ...] [--per-layer]

Covers the kaconvnet-s/b/l family (plus the all-standard-conv variant
of L) and the VGG ablation pair at both ends of the swap mask. Numbers
come from the same counters the CLI summary command uses, so this is
the quick way to eyeball model sizes after touching layer internals.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from kaconv.commands import load_config_dict, summary_rows  # noqa: E402
from kaconv.network import (  # noqa: E402
    VggAblationConfig,
    build_kavgg11,
    count_flops,
    count_params,
)

PRESETS = ("kaconvnet-s", "kaconvnet-b", "kaconvnet-l", "kaconvnet-l-std")


def audit_presets(names, per_layer: bool) -> None:
    print(f"{'preset':<18}{'params':>14}{'MACs':>18}")
    for name in names:
        cfg = load_config_dict(name)
        rows, params, macs = summary_rows(cfg, seed=0)
        print(f"{name:<18}{params:>14,}{macs:>18,}")
        if per_layer:
            for lname, lparams, lmacs in rows:
                print(f"  {lname:<20}{lparams:>12,}{lmacs:>18,}")


def audit_vgg() -> None:
    print()
    print(f"{'vgg variant':<18}{'params':>14}{'MACs':>18}")
    for tag, mask in (("vgg11", ()), ("kavgg11-glinear", tuple(range(1, 9)))):
        net = build_kavgg11(VggAblationConfig(ka_layer_set=mask), seed=0)
        params = count_params(net)
        macs = count_flops(net, (3, 32, 32))
        print(f"{tag:<18}{params:>14,}{macs:>18,}")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--preset", action="append",
                        help="restrict to these presets (repeatable)")
    parser.add_argument("--per-layer", action="store_true")
    args = parser.parse_args()

    audit_presets(args.preset or PRESETS, args.per_layer)
    if not args.preset:
        audit_vgg()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
