#!/usr/bin/env python3
"""Memorize a 32-sample batch: the cheapest end-to-end gradient check.

Usage: python3 scripts/overfit_sanity.py [--steps 200] [--samples 32] [--seed 0]

A net whose backward pass is right can drive training loss on a tiny
fixed batch to ~zero in a couple hundred steps. A net with a subtly
wrong gradient usually stalls well above that. No dataset files are
needed; inputs are random and labels are balanced.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np  # noqa: E402

from kaconv.network import NetworkConfig, build_kaconvnet, net_backward  # noqa: E402
from kaconv.training import AdamW, AdamWConfig, cross_entropy_bwd, cross_entropy_fwd  # noqa: E402


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=200)
    parser.add_argument("--samples", type=int, default=32)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    cfg = NetworkConfig(blocks=(1, 1, 1, 1), channels=(8, 16, 32, 64),
                        num_classes=4, in_channels=1, se_reduction=4)
    net = build_kaconvnet(cfg, seed=args.seed)

    x = rng.standard_normal((args.samples, 1, 28, 28))
    labels = np.arange(args.samples) % cfg.num_classes
    rng.shuffle(labels)

    opt = AdamW(net.named_params(), AdamWConfig(weight_decay=0.0))
    for step in range(args.steps):
        logits, caches = net.forward(x, train=True)
        loss, ce_cache = cross_entropy_fwd(logits, labels)
        grad_logits = cross_entropy_bwd(np.float64(1.0), ce_cache)
        _, grads = net_backward(net, grad_logits, caches)
        opt.step(grads, lr=3e-3)
        if step % 20 == 0 or step == args.steps - 1:
            acc = (logits.argmax(axis=1) == labels).mean()
            print(f"step {step:4d}  loss {loss:.6f}  batch_acc {acc:.3f}")
        if loss < 1e-3:
            print(f"memorized at step {step} (loss {loss:.2e})")
            return 0

    print("did not reach loss < 1e-3; something upstream is off")
    return 1


if __name__ == "__main__":
    raise SystemExit(main())
