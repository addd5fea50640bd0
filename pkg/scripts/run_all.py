"""Run every canonical experiment config and summarize the records.

Usage: python3 scripts/run_all.py [out_root]

Each config writes its artifacts under <out_root>/<experiment>/ and the
combined report lands in <out_root>/report.md.  Expect a few minutes of
wall clock; the flux and sinogram runs dominate.
"""

import sys
from pathlib import Path

from isl.cli import main

ROOT = Path(__file__).resolve().parents[1]


def run_all(out_root: str) -> int:
    worst = 0
    for config in sorted((ROOT / "configs").glob("*.json")):
        out = str(Path(out_root) / config.stem)
        print(f"== {config.name} -> {out}")
        worst = max(worst, main(["run", str(config), "--out", out]))
    worst = max(worst, main(["report", out_root]))
    return worst


if __name__ == "__main__":
    sys.exit(run_all(sys.argv[1] if len(sys.argv) > 1 else "runs"))
