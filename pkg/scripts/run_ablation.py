#!/usr/bin/env python3
"""Four-variant comparison table.

Runs the full model and the three standard reductions (linear patch
embedding, no channel-time mixer, dot-product attention) with a shared
seed, writing ablation.csv. Defaults to the synthetic nested-period
series; pass --data CSV to use a real one. Extra CLI flags pass through.
"""

import sys

from twins import cli

SPEC = "len=2000,channels=2,lag=5,noise=0.1|period=8|period=32,amp=0.6"

BASE = ["analyze", "ablate",
        "--lookback", "96", "--horizon", "24", "--patch", "8",
        "--d", "8", "--layers", "2", "--hidden", "64",
        "--lr", "1e-3", "--epochs", "10", "--batch-size", "32"]


def main() -> int:
    extra = sys.argv[1:]
    if not any(a.startswith(("--data", "--synthetic")) for a in extra):
        extra = ["--synthetic", SPEC] + extra
    return cli.main(BASE + extra)


if __name__ == "__main__":
    sys.exit(main())
