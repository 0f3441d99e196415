"""Run a simulation config and print its summary.

    python3 scripts/run_experiment.py scripts/configs/consistency.toml --out runs/consistency

Equivalent to ``admixclt simulate``; kept as a script so the configs in
scripts/configs can be run without installing the console entry point.
"""

import argparse
import json
import sys
from pathlib import Path

from admixclt.cli import main


def run(config, out, threads=0):
    rc = main(["simulate", "--config", str(config), "--out", str(out), "--threads", str(threads)])
    if rc:
        sys.exit(rc)
    summary = json.loads((Path(out) / "summary.json").read_text())
    summary.pop("config", None)
    return summary


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--out", default=None)
    ap.add_argument("--threads", type=int, default=0)
    args = ap.parse_args()
    out = args.out or Path("runs") / Path(args.config).stem
    print(json.dumps(run(args.config, out, args.threads), indent=2))
