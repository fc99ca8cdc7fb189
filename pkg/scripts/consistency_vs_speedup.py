"""Token consistency against speculative and stitched speedup on constructed pairs."""
import argparse
import csv
from pathlib import Path

import numpy as np

from rstitch.core import StitchConfig
from rstitch.latency import fixture_model
from rstitch.specdec import SpecDecConfig, compare_methods
from rstitch.stitch import token_consistency
from rstitch.toy import consistency_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results")
    ap.add_argument("--gamma", type=int, default=4)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    lat = fixture_model()
    rows = []
    for c in (0.0, 0.25, 0.5, 0.75, 1.0):
        suite = consistency_suite(c)
        measured = token_consistency(suite.slm, suite.llm, suite.prompts, 40, 0)
        table = compare_methods(suite.slm, suite.llm, suite.prompts, StitchConfig(0.5, 40, 0),
                                SpecDecConfig(args.gamma, 40, 0), lat, suite.targets)
        spec = [r for r in table if r.method == "speculative"]
        speedup = float(np.mean([r.speedup_vs_llm for r in spec]))
        accuracy = float(np.mean([r.correct for r in spec]))
        rows.append((c, measured, speedup, accuracy))
        print(f"consistency={measured:.3f} speculative_speedup={speedup:.3f} accuracy={accuracy:.2f}")
    with open(out / "consistency_speedup.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["target_consistency", "measured_consistency", "speculative_speedup", "speculative_accuracy"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
