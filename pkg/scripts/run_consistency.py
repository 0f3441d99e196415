"""Run scripts/configs/consistency.toml; extra arguments go to run_experiment."""

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))
from run_experiment import run  # noqa: E402

HERE = Path(__file__).parent

if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "runs/consistency"
    print(json.dumps(run(HERE / "configs" / "consistency.toml", out), indent=2))
