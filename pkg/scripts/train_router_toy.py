"""Train the router on both constructed routing tasks and report before/after."""
import argparse
from pathlib import Path

import numpy as np

from rstitch.core import StitchConfig, Variant
from rstitch.latency import fixture_model
from rstitch.policy import FEATURE_NAMES, RouterPolicy
from rstitch.router import DapoConfig, RoutingTask, evaluate_policy, target_oracle, train_router, write_training_log
from rstitch.toy import router_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results")
    ap.add_argument("--iters", type=int, default=200)
    ap.add_argument("--lr", type=float, default=0.05)
    ap.add_argument("--lam", type=float, default=5e-6)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    lat = fixture_model()
    scfg = StitchConfig(0.001, 32, 0, Variant.ROUTED)
    cfg = DapoConfig(batch_prompts=4, iterations=args.iters, learning_rate=args.lr, lam=args.lam, seed=args.seed)
    never = RouterPolicy(np.r_[np.zeros(len(FEATURE_NAMES) - 1), -50.0])
    for kind in ("slm_correct", "llm_needed"):
        suite = router_suite(kind)
        tasks = [RoutingTask(p, target_oracle(t)) for p, t in zip(suite.prompts, suite.targets)]
        policy, hist = train_router(suite.slm, suite.llm, tasks, lat, cfg, scfg)
        policy.to_json(out / f"router_{kind}.json")
        write_training_log(hist, out / f"router_{kind}.csv")

        print(f"[{kind}]")
        for label, pol, stochastic in (("untrained (sampled)", RouterPolicy.zeros(), True),
                                       ("trained (sampled)", policy, True),
                                       ("trained (argmax)", policy, False),
                                       ("never switch", never, False)):
            acc, ms = evaluate_policy(suite.slm, suite.llm, tasks, pol, scfg, lat, rollouts=32, seed=5,
                                      stochastic=stochastic)
            print(f"  {label:<20} accuracy={acc:.3f} latency_ms={ms:.1f}")
        print("  weights: " + ", ".join(f"{n}={w:+.2f}" for n, w in zip(FEATURE_NAMES, policy.weights)))


if __name__ == "__main__":
    main()
