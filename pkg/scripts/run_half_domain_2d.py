#!/usr/bin/env python3
"""2-D half-domain sweep with the shift-invert solver (takes a few minutes).

The deepest sublevel set of (x1^2-1)^2 + x2^2 on (-1.7, 0) x (-1, 1) touches
the boundary at three points of the same level: the aligned critical saddle
at the origin and the two non-critical minima of the boundary restriction at
(-1, +-1).  The two-term prediction sqrt(h) K1 + h K2 covers all three; the
single-term principal-eigenvalue shortcut does not apply here (its verdict
and reasons land in report.json).
"""

import json
import sys
from pathlib import Path

from wittenlab import cli

CONFIG = {
    "schema": 1,
    "potential": "(x1^2-1)^2 + x2^2",
    "dimension": 2,
    "domain": {"lower": [-1.7, -1.0], "upper": [0.0, 1.0]},
    "grid": [513, 257],
    "h_values": [0.35, 0.30, 0.25],
    "eigenvalue_count": 3,
    "solver": {"method": "shift_invert_lanczos", "tolerance": 1e-9},
    "quasimode_diagnostics": False,
    "principal_formula_check": True,
    "seed": 1,
}


def main():
    out = Path("out/half_domain_2d")
    out.mkdir(parents=True, exist_ok=True)
    cfg_path = out / "config.json"
    cfg_path.write_text(json.dumps(CONFIG, indent=1))
    code = cli.main(["run", "--config", str(cfg_path), "--out", str(out)])
    if code != 0:
        return code
    report = json.loads((out / "report.json").read_text())
    print("\nshortcut-formula verdict:", report["principal_formula"])
    for row in report["ratios"]:
        print(f"h={row['h']}: lambda={row['lambda_numeric']:.6e} ratio={row['ratio']:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
