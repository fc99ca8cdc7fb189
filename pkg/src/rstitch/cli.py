"""Command-line entry point: ``rstitch <command> [flags]``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import sys
import zlib
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import analysis, toy
from .backends import GREEDY, NGramModel, Sample, ScriptedModel
from .core import ModelRole, StitchConfig, Variant, read_trace, write_trace
from .errors import StitchError
from .latency import FIXTURES, LatencyModel, fit_role, load_fixture, read_profiling_csv, residual_rms, trajectory_latency
from .policy import RouterPolicy
from .router import DapoConfig, RoutingTask, target_oracle, train_router, write_training_log
from .specdec import SpecDecConfig, compare_methods, write_comparison_csv
from .stitch import stitch_decode
from .sweep import DEFAULT_TAUS, threshold_sweep, write_sweep_csv


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def substream(seed: int, name: str, *index: int) -> np.random.SeedSequence:
    """Named, reproducible child stream of the global ``--seed``."""
    return np.random.SeedSequence([seed, zlib.crc32(name.encode()), *index])


def _stream_seed(seed: int, name: str, *index: int) -> int:
    return int(substream(seed, name, *index).generate_state(1)[0])


# -- config file ------------------------------------------------------------

def read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; values parsed as JSON when possible."""
    out = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith("["):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{n}: expected key = value")
        value = value.strip()
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            value = value.strip("'\"")
        out[key.strip().replace("-", "_")] = value
    return out


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


# -- loading helpers --------------------------------------------------------

def load_backend(path, role: ModelRole, args):
    p = Path(path)
    if p.suffix == ".json":
        return ScriptedModel.from_json(p, role=role)
    if args.vocab is None:
        raise UsageError("--vocab is required for n-gram corpus backends")
    return NGramModel.from_corpus_file(p, args.vocab, args.ngram_order, args.alpha, role=role)


def load_latency(specs: Optional[Sequence[str]]) -> LatencyModel:
    if not specs:
        return LatencyModel({ModelRole.SLM: load_fixture("slm-1.5b"), ModelRole.LLM: load_fixture("llm-14b")})
    roles, files = {}, []
    for spec in specs:
        if spec in FIXTURES:
            roles[ModelRole.SLM if spec.startswith("slm") else ModelRole.LLM] = load_fixture(spec)
        else:
            files.append(spec)
    model = LatencyModel.from_json(*files) if files else LatencyModel({})
    model.roles.update(roles)
    return model.require_both()


def _taus(value) -> list[float]:
    if value is None:
        return list(DEFAULT_TAUS)
    if isinstance(value, (list, tuple)):
        return [float(x) for x in value]
    return [float(x) for x in str(value).replace(",", " ").split()]


def _common(p: argparse.ArgumentParser, models=True):
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--seed", type=int, default=0)
    if models:
        p.add_argument("--slm", help="ScriptedModel JSON or n-gram corpus file")
        p.add_argument("--llm", help="ScriptedModel JSON or n-gram corpus file")
        p.add_argument("--vocab", type=int, help="vocabulary size for n-gram corpora")
        p.add_argument("--ngram-order", type=int, default=2)
        p.add_argument("--alpha", type=float, default=1.0)
        p.add_argument("--prompts", help="one prompt per line, optional '| target' suffix")
        p.add_argument("--budget", type=int, default=64, help="max generated tokens")
        p.add_argument("--eos", type=int, default=0)
        p.add_argument("--latency", nargs="+", help="latency JSON files or fixture names")


# -- commands ---------------------------------------------------------------

def cmd_decode(args) -> int:
    _require(args, "slm", "llm", "prompts", "tau", "out")
    slm = load_backend(args.slm, ModelRole.SLM, args)
    llm = load_backend(args.llm, ModelRole.LLM, args)
    prompts, _ = toy.read_prompts(args.prompts)
    variant = Variant(args.variant)
    router = RouterPolicy.from_json(args.router) if args.router else None
    cfg = StitchConfig(tau=float(args.tau), max_tokens=args.budget, eos_token=args.eos, variant=variant)
    latency = load_latency(args.latency) if args.latency else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, prompt in enumerate(prompts):
        mode = Sample(_stream_seed(args.seed, "decode", i)) if args.sample else GREEDY
        trace = stitch_decode(slm, llm, prompt, cfg, router=router, mode=mode)
        write_trace(trace, out / f"trace_{i:04d}.jsonl")
        counts = trace.tokens_by_role()
        line = (f"prompt={i} tokens_slm={counts[ModelRole.SLM]} tokens_llm={counts[ModelRole.LLM]} "
                f"discards={trace.discards()} terminated={trace.terminated.value}")
        if latency is not None:
            line += f" latency_ms={trajectory_latency(trace, latency):.6f}"
        print(line)
    return 0


def cmd_sweep(args) -> int:
    _require(args, "slm", "llm", "prompts", "out")
    slm = load_backend(args.slm, ModelRole.SLM, args)
    llm = load_backend(args.llm, ModelRole.LLM, args)
    prompts, targets = toy.read_prompts(args.prompts)
    router = RouterPolicy.from_json(args.router) if args.router else None
    rows = threshold_sweep(slm, llm, prompts, targets, load_latency(args.latency), _taus(args.taus),
                           args.budget, args.eos, router=router)
    write_sweep_csv(rows, args.out)
    for r in rows:
        print(f"tau={r.tau} accuracy={r.accuracy:.4f} latency_ms={r.mean_latency_ms:.3f} "
              f"speedup={r.speedup_vs_llm:.3f}")
    return 0


def cmd_fit_latency(args) -> int:
    if not (args.slm_csv or args.llm_csv):
        raise UsageError("give --slm-csv and/or --llm-csv")
    roles = {}
    for role, path in ((ModelRole.SLM, args.slm_csv), (ModelRole.LLM, args.llm_csv)):
        if path:
            samples = read_profiling_csv(path)
            roles[role] = fit_role(samples)
            print(f"{role.value}: samples={len(samples)} residual_rms_ms={residual_rms(roles[role], samples):.6g}")
    LatencyModel(roles).to_json(args.out)
    return 0


def cmd_train_router(args) -> int:
    _require(args, "slm", "llm", "prompts", "out_policy")
    slm = load_backend(args.slm, ModelRole.SLM, args)
    llm = load_backend(args.llm, ModelRole.LLM, args)
    prompts, targets = toy.read_prompts(args.prompts)
    if any(t is None for t in targets):
        raise UsageError("router training needs a '| target' on every prompt line")
    tasks = [RoutingTask(p, target_oracle(t)) for p, t in zip(prompts, targets)]
    cfg = DapoConfig(group_size=args.group_size, epsilon=args.epsilon, lam=args.lam,
                     learning_rate=args.lr, batch_prompts=args.batch, iterations=args.iters,
                     epochs=args.epochs, seed=_stream_seed(args.seed, "rollout"))
    scfg = StitchConfig(tau=float(args.tau), max_tokens=args.budget, eos_token=args.eos, variant=Variant.ROUTED)
    policy, history = train_router(slm, llm, tasks, load_latency(args.latency), cfg, scfg)
    policy.to_json(args.out_policy)
    if args.out_log:
        write_training_log(history, args.out_log)
    last = history[-1]
    print(f"iterations={len(history)} mean_reward={last.mean_reward:.6f} "
          f"mean_latency_ms={last.mean_latency_ms:.3f} accuracy={last.accuracy:.4f}")
    return 0


def cmd_compare(args) -> int:
    _require(args, "slm", "llm", "prompts", "tau", "out")
    slm = load_backend(args.slm, ModelRole.SLM, args)
    llm = load_backend(args.llm, ModelRole.LLM, args)
    prompts, targets = toy.read_prompts(args.prompts)
    router = RouterPolicy.from_json(args.router) if args.router else None
    scfg = StitchConfig(tau=float(args.tau), max_tokens=args.budget, eos_token=args.eos,
                        variant=Variant.ROUTED if router else Variant.ENTROPY_ONLY)
    spec = SpecDecConfig(gamma=args.gamma, max_tokens=args.budget, eos_token=args.eos)
    rows = compare_methods(slm, llm, prompts, scfg, spec, load_latency(args.latency), targets, router=router)
    write_comparison_csv(rows, args.out)
    return 0


def cmd_analyze(args) -> int:
    _require(args, "traces", "out")
    paths = sorted(Path(args.traces).glob("*.jsonl"))
    if not paths:
        raise UsageError(f"no traces under {args.traces}")
    traces = [read_trace(p) for p in paths]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.prompts:
        _, targets = toy.read_prompts(args.prompts)
        if len(targets) != len(traces):
            raise UsageError("prompt file and trace directory disagree in length")
        correct = [t is not None and tr.output == t for tr, t in zip(traces, targets)]
        summary = analysis.sample_entropy_stats(traces, correct, bins=args.bins)
        analysis.write_sample_entropy_csv(summary, correct, out / "sample_entropy.csv")
        analysis.write_cohort_csv(summary, out / "cohorts.csv")
        for flag in summary.flags:
            print(flag, file=sys.stderr)
    dist = analysis.token_entropy_distribution(traces, _taus(args.thresholds), bins=args.bins)
    analysis.write_histogram_csv(dist.histogram, out / "entropy_hist.csv")
    analysis.write_exceed_csv(dist, out / "exceed.csv")
    if args.harmful:
        idx = [int(x) for x in Path(args.harmful).read_text().split()]
        harm = analysis.harmful_token_context(traces, idx, args.window)
        analysis.write_harmful_csv(harm, out / "harmful.csv")
    print(f"traces={len(traces)} tokens={dist.histogram.total} "
          + " ".join(f"above_{k:g}={v:.4f}" for k, v in dist.exceed.items()))
    return 0


def cmd_make_toy(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "sweep":
        suite = toy.sweep_suite(args.n_prompts, seed=args.seed)
    elif args.kind == "consistency":
        suite = toy.consistency_suite(args.consistency, args.n_prompts, seed=args.seed)
    else:
        suite = toy.router_suite(args.kind, args.n_prompts, seed=args.seed)
    suite.slm.to_json(out / "slm.json")
    suite.llm.to_json(out / "llm.json")
    toy.write_prompts(out / "prompts.txt", suite.prompts, suite.targets)
    print(f"wrote {len(suite.prompts)} prompts to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rstitch", description="Entropy-guided SLM/LLM stitching on toy backends.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("decode", help="stitch-decode each prompt and write JSONL traces")
    _common(p)
    p.add_argument("--tau", type=float)
    p.add_argument("--variant", choices=[v.value for v in Variant], default=Variant.ENTROPY_ONLY.value)
    p.add_argument("--router", help="router policy JSON (Routed variant)")
    p.add_argument("--sample", action="store_true", help="sample tokens instead of greedy selection")
    p.add_argument("--out", help="output directory for traces")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("sweep", help="accuracy/latency trade-off across thresholds")
    _common(p)
    p.add_argument("--taus", help="comma-separated thresholds (default: 0.001,0.005,0.02,0.03,0.05)")
    p.add_argument("--router", help="router policy JSON")
    p.add_argument("--out", help="output CSV")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fit-latency", help="fit prefill/decode latency coefficients from profiling CSVs")
    _common(p, models=False)
    p.add_argument("--slm-csv")
    p.add_argument("--llm-csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_latency)

    p = sub.add_parser("train-router", help="train the router policy with the clipped group objective")
    _common(p)
    p.add_argument("--tau", type=float, default=0.001)
    p.add_argument("--group-size", type=int, default=8)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lam", type=float, default=5e-6)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--epsilon", type=float, default=0.2)
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--out-policy")
    p.add_argument("--out-log")
    p.set_defaults(func=cmd_train_router)

    p = sub.add_parser("compare", help="LLM-only / SLM-only / speculative / stitched comparison table")
    _common(p)
    p.add_argument("--tau", type=float)
    p.add_argument("--gamma", type=int, default=4)
    p.add_argument("--router")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("analyze", help="entropy diagnostics over stored traces")
    _common(p, models=False)
    p.add_argument("--traces")
    p.add_argument("--prompts", help="prompt file with targets, for correct/incorrect cohorts")
    p.add_argument("--harmful", help="file of harmful-token indices, one per trace")
    p.add_argument("--window", type=int, default=analysis.DEFAULT_WINDOW)
    p.add_argument("--thresholds", default="0.1")
    p.add_argument("--bins", type=int, default=analysis.N_BINS)
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("make-toy", help="write a constructed toy backend pair and prompt file")
    _common(p, models=False)
    p.add_argument("--kind", choices=["sweep", "consistency", "slm_correct", "llm_needed"], default="sweep")
    p.add_argument("--n-prompts", type=int, default=50)
    p.add_argument("--consistency", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_toy)
    return parser


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        # re-parse with file values as defaults so explicit flags still win
        sub = parser._subparsers._group_actions[0].choices[args.command]
        values = read_config(args.config)
        known = {a.dest for a in sub._actions}
        unknown = set(values) - known
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    except UsageError as exc:
        print(f"rstitch: error: {exc}", file=sys.stderr)
        return 1
    except (StitchError, OSError, ValueError, KeyError) as exc:
        print(f"rstitch: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
