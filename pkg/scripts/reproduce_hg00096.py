"""Asymptotic densities for the HG00096-style estimates on the 55-marker panel.

Writes density.csv/summary.json for the K=3 and K=2 inputs and prints the
atoms and 95% intervals. The P files are synthetic stand-ins for the panel
(see make_fixtures.py); pass real ADMIXTURE .Q/.P files to use actual data.

    python3 scripts/reproduce_hg00096.py [--q3 F --p3 F --q2 F --p2 F] [--out runs/hg00096]
"""

import argparse
import json
from pathlib import Path

from admixclt.cli import main

FIX = Path(__file__).resolve().parents[1] / "tests" / "fixtures"

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--q3", default=FIX / "hg00096_k3.Q")
    ap.add_argument("--p3", default=FIX / "kidd_like_k3.P")
    ap.add_argument("--q2", default=FIX / "hg00096_k2.Q")
    ap.add_argument("--p2", default=FIX / "kidd_like_k2.P")
    ap.add_argument("--samples", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=10)
    ap.add_argument("--out", default="runs/hg00096")
    a = ap.parse_args()
    for tag, q, p in (("k3", a.q3, a.p3), ("k2", a.q2, a.p2)):
        out = Path(a.out) / tag
        rc = main(["uncertainty", "--q-file", str(q), "--p-file", str(p), "--samples",
                   str(a.samples), "--seed", str(a.seed), "--out", str(out)])
        if rc:
            raise SystemExit(rc)
        s = json.loads((out / "summary.json").read_text())
        print(tag, "estimate", [round(v, 6) for v in s["estimate"]])
        print("   atoms", s["atoms"])
        print("   95% intervals", s["intervals_95"])
