#!/usr/bin/env python3
"""Validation sweep on the half double-well with an absorbing critical wall.

The domain ends exactly at the saddle: the boundary point carries a vanishing
gradient, so the prediction runs at order h with the wall-doubled constant
8 sqrt(2)/pi and an O(sqrt(h)) remainder.
"""

import json
import sys
from pathlib import Path

from wittenlab import cli

CONFIG = {
    "schema": 1,
    "potential": "(x1^2-1)^2",
    "dimension": 1,
    "domain": {"lower": [-1.7], "upper": [0.0]},
    "grid": [2049],
    "h_values": [0.30, 0.25, 0.20],
    "eigenvalue_count": 3,
    "solver": {"method": "dense", "tolerance": 1e-10},
    "quasimode_diagnostics": True,
    "principal_formula_check": True,
    "seed": 1,
}


def main():
    out = Path("out/half_well")
    out.mkdir(parents=True, exist_ok=True)
    cfg_path = out / "config.json"
    cfg_path.write_text(json.dumps(CONFIG, indent=1))
    code = cli.main(["run", "--config", str(cfg_path), "--out", str(out)])
    if code != 0:
        return code
    report = json.loads((out / "report.json").read_text())
    for row in report["ratios"]:
        print(f"h={row['h']}: lambda={row['lambda_numeric']:.6e} "
              f"ratio={row['ratio']:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
