"""Threshold sweep on the 50-prompt toy suite, with both latency settings."""
import argparse
from pathlib import Path

from rstitch.latency import fixture_model
from rstitch.sweep import DEFAULT_TAUS, threshold_sweep, write_sweep_csv
from rstitch.toy import sweep_suite, toy_latency_model


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results")
    ap.add_argument("--n-prompts", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    suite = sweep_suite(args.n_prompts, seed=args.seed)
    taus = sorted(DEFAULT_TAUS + (0.1, 0.3), reverse=True)
    for name, lat in (("fixture", fixture_model()), ("toy", toy_latency_model())):
        rows = threshold_sweep(suite.slm, suite.llm, suite.prompts, suite.targets, lat, taus, suite.max_len)
        write_sweep_csv(rows, out / f"sweep_{name}.csv")
        print(f"[{name} latency]")
        print(f"{'tau':>6} {'acc':>5} {'lat_ms':>9} {'slm':>6} {'llm':>6} {'speedup':>7}")
        for r in rows:
            print(f"{r.tau:>6} {r.accuracy:5.2f} {r.mean_latency_ms:9.1f} {r.mean_tokens_slm:6.2f} "
                  f"{r.mean_tokens_llm:6.2f} {r.speedup_vs_llm:7.2f}")


if __name__ == "__main__":
    main()
