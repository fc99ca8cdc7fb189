"""Threshold sweep: accuracy / latency trade-off of stitched decoding across tau values."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .backends import ModelBackend
from .core import ModelRole, StitchConfig, Variant
from .latency import LatencyModel, trajectory_latency
from .stitch import single_model_decode, stitch_decode

DEFAULT_TAUS = (0.001, 0.005, 0.02, 0.03, 0.05)


@dataclass(frozen=True)
class SweepRow:
    tau: str  # a threshold, or "llm" / "slm" for the single-model baselines
    accuracy: float
    mean_latency_ms: float
    mean_tokens_slm: float
    mean_tokens_llm: float
    speedup_vs_llm: float


def _score(output, target, reference) -> bool:
    return tuple(output) == tuple(target if target is not None else reference)


def threshold_sweep(slm: ModelBackend, llm: ModelBackend, prompts: Sequence[Sequence[int]],
                    targets: Sequence[Optional[Sequence[int]]], latency: LatencyModel,
                    taus: Sequence[float] = DEFAULT_TAUS, max_tokens: int = 64, eos_token: int = 0,
                    router=None) -> list[SweepRow]:
    """Baseline rows come first; prompts without a target are scored against the LLM-only output."""
    latency.require_both()
    llm_traces = [single_model_decode(llm, ModelRole.LLM, p, max_tokens, eos_token) for p in prompts]
    slm_traces = [single_model_decode(slm, ModelRole.SLM, p, max_tokens, eos_token) for p in prompts]
    reference = [tr.output for tr in llm_traces]
    targets = list(targets) if targets is not None else [None] * len(prompts)

    def summarize(label, traces, base):
        lat = float(np.mean([trajectory_latency(tr, latency) for tr in traces]))
        acc = float(np.mean([_score(tr.output, t, r) for tr, t, r in zip(traces, targets, reference)]))
        counts = [tr.tokens_by_role() for tr in traces]
        return SweepRow(label, acc, lat,
                        float(np.mean([c[ModelRole.SLM] for c in counts])),
                        float(np.mean([c[ModelRole.LLM] for c in counts])),
                        (base if base is not None else lat) / lat)

    rows = [summarize("llm", llm_traces, None)]
    base = rows[0].mean_latency_ms
    rows.append(summarize("slm", slm_traces, base))
    variant = Variant.ROUTED if router is not None else Variant.ENTROPY_ONLY
    for tau in taus:
        cfg = StitchConfig(tau=tau, max_tokens=max_tokens, eos_token=eos_token, variant=variant)
        traces = [stitch_decode(slm, llm, p, cfg, router=router) for p in prompts]
        rows.append(summarize(f"{tau:g}", traces, base))
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tau", "accuracy", "mean_latency_ms", "mean_tokens_slm", "mean_tokens_llm", "speedup_vs_llm"])
        for r in rows:
            w.writerow([r.tau, f"{r.accuracy:.9g}", repr(r.mean_latency_ms), repr(r.mean_tokens_slm),
                        repr(r.mean_tokens_llm), repr(r.speedup_vs_llm)])
