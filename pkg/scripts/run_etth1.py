#!/usr/bin/env python3
"""ETTh1 reference run: lookback 96, horizon 96, default settings.

The dataset is not bundled. Point TWINS_ETTH1 at the CSV or place it at
data/ETTh1.csv relative to the repository root. Extra CLI flags pass
through.
"""

import os
import sys

from twins import cli


def main() -> int:
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    path = os.environ.get("TWINS_ETTH1", os.path.join(root, "data", "ETTh1.csv"))
    if not os.path.exists(path):
        print(f"ETTh1 csv not found at {path}; set TWINS_ETTH1 or place "
              "it at data/ETTh1.csv", file=sys.stderr)
        return 1
    args = ["train", "--data", path,
            "--lookback", "96", "--horizon", "96", "--patch", "8",
            "--heads", "4", "--k", "3", "--lr", "1e-4",
            "--epochs", "30", "--batch-size", "32", "--patience", "5"]
    return cli.main(args + sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
