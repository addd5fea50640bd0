"""Sweep the probe speed on the linear experiment and print the decay rate.

Usage: python3 scripts/speed_sweep.py [out_dir]

Fans the canonical linear-xray config over v in {8, 16, 32} and reads the
aggregate slope of the pairing error back from sweep_summary.json; the
high-velocity limit predicts -1.
"""

import json
import sys
from pathlib import Path

from isl.experiments import load_config, sweep

ROOT = Path(__file__).resolve().parents[1]


def run(out_dir: str) -> int:
    cfg = load_config(ROOT / "configs" / "linear-xray.json")
    records = sweep(cfg, "v", [8.0, 16.0, 32.0], out=out_dir)
    for record in records:
        print(f"v={record.config['sweep']['speeds'][0]:g}: "
              f"pairing_error={record.key_metric():.4e}  passed={record.passed}")
    summary = json.loads((Path(out_dir) / "sweep_summary.json").read_text())
    print(f"aggregate decay slope: {summary['decay_slope']:.4f}")
    return 0 if all(r.passed for r in records) else 1


if __name__ == "__main__":
    sys.exit(run(sys.argv[1] if len(sys.argv) > 1 else "runs/speed-sweep"))
