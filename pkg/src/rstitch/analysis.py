"""Entropy diagnostics over generation traces, emitted as plot-ready tables."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import GenerationTrace, ModelRole

N_BINS = 51
DEFAULT_WINDOW = 16


def kept_entropies(trace: GenerationTrace, role: Optional[ModelRole] = None) -> list[float]:
    return [s.entropy for s in trace.steps if s.kept and (role is None or s.role is role)]


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def rows(self):
        for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
            yield float(lo), float(hi), int(c)


def entropy_histogram(values: Sequence[float], bins: int = N_BINS) -> Histogram:
    counts, edges = np.histogram(np.asarray(values, dtype=np.float64), bins=bins, range=(0.0, 1.0))
    return Histogram(edges, counts)


@dataclass
class Cohort:
    trace_means: list[float]
    mean: float
    median: float
    histogram: Histogram

    @property
    def empty(self) -> bool:
        return not self.trace_means


@dataclass
class EntropySummary:
    per_trace: list[float]
    correct: Cohort
    incorrect: Cohort
    flags: list[str] = field(default_factory=list)


def _cohort(means: list[float], bins: int) -> Cohort:
    if not means:
        return Cohort([], math.nan, math.nan, entropy_histogram([], bins))
    return Cohort(means, float(np.mean(means)), float(np.median(means)), entropy_histogram(means, bins))


def sample_entropy_stats(traces: Sequence[GenerationTrace], correctness: Sequence[bool],
                         bins: int = N_BINS) -> EntropySummary:
    """Per-trace mean entropy split into correct / incorrect cohorts."""
    if len(traces) != len(correctness):
        raise ValueError("traces and correctness must align")
    per_trace = []
    for tr in traces:
        ent = kept_entropies(tr)
        per_trace.append(float(np.mean(ent)) if ent else math.nan)
    good = [m for m, ok in zip(per_trace, correctness) if ok and not math.isnan(m)]
    bad = [m for m, ok in zip(per_trace, correctness) if not ok and not math.isnan(m)]
    summary = EntropySummary(per_trace, _cohort(good, bins), _cohort(bad, bins))
    if summary.correct.empty:
        summary.flags.append("EmptyCohort:correct")
    if summary.incorrect.empty:
        summary.flags.append("EmptyCohort:incorrect")
    return summary


@dataclass
class TokenEntropyDistribution:
    histogram: Histogram
    exceed: dict[float, float]


def token_entropy_distribution(traces: Sequence[GenerationTrace], thresholds: Sequence[float] = (0.1,),
                               role: Optional[ModelRole] = None, bins: int = N_BINS) -> TokenEntropyDistribution:
    """Histogram of kept-token entropies and the fraction strictly above each threshold."""
    values = np.array([h for tr in traces for h in kept_entropies(tr, role)])
    if values.size == 0:
        raise ValueError("no tokens to analyse")
    exceed = {float(th): float(np.mean(values > th)) for th in thresholds}
    return TokenEntropyDistribution(entropy_histogram(values, bins), exceed)


@dataclass
class HarmfulContext:
    window_mean: float
    global_mean: float
    window_len: int
    flags: list[str] = field(default_factory=list)


@dataclass
class HarmfulSummary:
    per_trace: list[HarmfulContext]
    mean_window: float
    mean_global: float


def harmful_token_context(traces: Sequence[GenerationTrace], harmful_index: Sequence[int],
                          window: int = DEFAULT_WINDOW) -> HarmfulSummary:
    """Mean entropy over the ``window`` kept tokens preceding each harmful token,
    next to the trace's overall mean. Short prefixes truncate the window and are flagged."""
    if window < 1:
        raise ValueError("window must be >= 1")
    if len(traces) != len(harmful_index):
        raise ValueError("one harmful index per trace")
    rows = []
    for tr, idx in zip(traces, harmful_index):
        ent = kept_entropies(tr)
        if not 0 <= idx < len(ent):
            raise ValueError(f"harmful index {idx} outside trace of {len(ent)} tokens")
        lo = idx - window
        flags = []
        if lo < 0:
            flags.append("WindowUnderflow")
            lo = 0
        win = ent[lo:idx]
        if not win:
            flags.append("EmptyWindow")
        rows.append(HarmfulContext(float(np.mean(win)) if win else math.nan, float(np.mean(ent)), len(win), flags))
    wins = [r.window_mean for r in rows if not math.isnan(r.window_mean)]
    return HarmfulSummary(rows, float(np.mean(wins)) if wins else math.nan,
                          float(np.mean([r.global_mean for r in rows])) if rows else math.nan)


def find_harmful_index(slm_trace: GenerationTrace, llm_completion, prompt: Sequence[int], oracle) -> Optional[int]:
    """Index of the first SLM token whose inclusion flips the LLM's answer.

    ``llm_completion(prefix_tokens)`` continues the LLM from prompt + prefix and
    returns the full output; ``oracle(output)`` scores it.
    """
    out = list(slm_trace.output)
    if not oracle(llm_completion([])):
        return None
    for i in range(len(out)):
        if not oracle(llm_completion(out[:i + 1])):
            return i
    return None


# -- CSV emitters -----------------------------------------------------------

def _fmt(x) -> str:
    return "" if isinstance(x, float) and math.isnan(x) else f"{x:.9g}"


def write_histogram_csv(hist: Histogram, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in hist.rows():
            w.writerow([_fmt(lo), _fmt(hi), c])


def write_sample_entropy_csv(summary: EntropySummary, correctness: Sequence[bool], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trace_id", "mean_entropy", "correct"])
        for i, (m, ok) in enumerate(zip(summary.per_trace, correctness)):
            w.writerow([i, _fmt(m), int(ok)])


def write_cohort_csv(summary: EntropySummary, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cohort", "n", "mean", "median"])
        for name, c in (("correct", summary.correct), ("incorrect", summary.incorrect)):
            w.writerow([name, len(c.trace_means), _fmt(c.mean), _fmt(c.median)])


def write_exceed_csv(dist: TokenEntropyDistribution, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fraction_above"])
        for th, frac in dist.exceed.items():
            w.writerow([_fmt(th), _fmt(frac)])


def write_harmful_csv(summary: HarmfulSummary, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trace_id", "window_mean", "global_mean", "window_len", "flags"])
        for i, r in enumerate(summary.per_trace):
            w.writerow([i, _fmt(r.window_mean), _fmt(r.global_mean), r.window_len, ";".join(r.flags)])
