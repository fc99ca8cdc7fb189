"""Draft-verify speculative decoding, the baseline that stitched decoding is compared against."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .backends import GREEDY, Greedy, KvCacheState, ModelBackend, SelectionMode, advance, inverse_cdf, prefill, rollback_one, select_token
from .core import Action, GenerationTrace, ModelRole, StepRecord, StitchConfig, Termination
from .latency import LatencyModel, trajectory_latency
from .stitch import check_shared_vocabulary, normalized_entropy, single_model_decode, stitch_decode

SLM, LLM = ModelRole.SLM, ModelRole.LLM


@dataclass(frozen=True)
class SpecDecConfig:
    gamma: int = 4
    max_tokens: int = 64
    eos_token: int = 0
    mode: SelectionMode = GREEDY

    def __post_init__(self):
        if self.gamma < 1:
            raise ValueError("gamma must be >= 1")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


@dataclass
class SpecDecStats:
    rounds: int = 0
    drafted_tokens: int = 0
    accepted_tokens: int = 0
    rollbacks: int = 0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted_tokens / self.drafted_tokens if self.drafted_tokens else 1.0


def _residual(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    r = np.maximum(p - q, 0.0)
    return r / r.sum()


def speculative_decode(draft: ModelBackend, target: ModelBackend, prompt: Sequence[int],
                       config: SpecDecConfig) -> tuple[tuple[int, ...], SpecDecStats, GenerationTrace]:
    """Draft up to ``gamma`` tokens, verify them with one target pass, keep the
    agreeing prefix plus the target's own next token.

    Trace records: draft steps are SLM records (rejected drafts carry no token);
    each verification pass is one LLM prefill record over the target's unprocessed
    span including the drafts. When the round ends on an accepted EOS draft the
    verification record emits nothing.
    """
    V = check_shared_vocabulary(draft, target)
    greedy = isinstance(config.mode, Greedy)
    rng = None if greedy else config.mode.make_rng()
    ctx = list(prompt)
    n_prompt = len(ctx)
    dcache, tcache = KvCacheState(SLM), KvCacheState(LLM)
    stats = SpecDecStats()
    steps: list[StepRecord] = []
    terminated = Termination.BUDGET
    t = 0

    def emitted():
        return len(ctx) - n_prompt

    while emitted() < config.max_tokens:
        remaining = config.max_tokens - emitted()
        # leave room for the target's token so every verification emits one
        k = min(config.gamma, remaining - 1)
        if k == 0:
            kv = tcache.cached_len
            tcache, p, span = advance(target, tcache, ctx)
            tok = select_token(p, config.mode, rng)
            steps.append(StepRecord(t, LLM, tok, normalized_entropy(p, V), Action.KEEP, span, kv))
            ctx.append(tok)
            t += 1
            if tok == config.eos_token:
                terminated = Termination.EOS
            break

        stats.rounds += 1
        drafts, qs, drec = [], [], []
        dctx = list(ctx)
        for _ in range(k):
            kv = dcache.cached_len
            dcache, q, span = advance(draft, dcache, dctx)
            tok = select_token(q, config.mode, rng)
            drafts.append(tok)
            qs.append(q.probs)
            drec.append((kv, span, normalized_entropy(q, V)))
            dctx.append(tok)
            if tok == config.eos_token:
                break
        k = len(drafts)
        stats.drafted_tokens += k

        # one parallel target pass scores every drafted position plus the next
        kv_t = tcache.cached_len
        span_t = len(dctx) - kv_t
        tcache, _ = prefill(target, tcache, dctx, kv_t)
        ps = [target.distribution(dctx[:len(ctx) + j]).probs for j in range(k + 1)]

        n = k
        extra: Optional[int] = None
        for j in range(k):
            x = drafts[j]
            if greedy:
                ok = int(np.argmax(ps[j])) == x
            else:
                ok = rng.random() < min(1.0, ps[j][x] / qs[j][x])
            if not ok:
                n = j
                extra = int(np.argmax(ps[j])) if greedy else inverse_cdf(_residual(ps[j], qs[j]), rng.random())
                break
        if n == k and drafts[-1] != config.eos_token:
            extra = int(np.argmax(ps[k])) if greedy else inverse_cdf(ps[k], rng.random())
        if n < k:
            stats.rollbacks += 1
        stats.accepted_tokens += n

        for j, (kv, span, h) in enumerate(drec):
            if j < n:
                steps.append(StepRecord(t, SLM, drafts[j], h, Action.KEEP, span, kv))
            else:
                steps.append(StepRecord(t, SLM, None, h, Action.DISCARD_AND_SWITCH, span, kv))
            t += 1
        h_t = normalized_entropy(ps[n], V)
        if extra is None:
            steps.append(StepRecord(t, LLM, None, h_t, Action.DISCARD_AND_SWITCH, span_t, kv_t))
        else:
            steps.append(StepRecord(t, LLM, extra, h_t, Action.KEEP, span_t, kv_t))
        t += 1

        new_tokens = drafts[:n] + ([] if extra is None else [extra])
        ctx.extend(new_tokens)
        while tcache.cached_len > len(ctx):
            tcache = rollback_one(tcache)
        while dcache.cached_len > len(ctx) - (extra is not None):
            dcache = rollback_one(dcache)
        if config.eos_token in new_tokens:
            terminated = Termination.EOS
            break

    output = tuple(ctx[n_prompt:])
    trace = GenerationTrace(tuple(prompt), tuple(steps), output, terminated, variant="SpecDec")
    return output, stats, trace


# -- method comparison ------------------------------------------------------

@dataclass(frozen=True)
class ComparisonRow:
    prompt_id: int
    method: str
    correct: bool
    tokens_slm: int
    tokens_llm: int
    latency_ms: float
    speedup_vs_llm: float
    output: tuple[int, ...] = ()

    @property
    def tokens_total(self) -> int:
        return self.tokens_slm + self.tokens_llm


METHODS = ("llm_only", "slm_only", "speculative", "rstitch")


def compare_methods(slm: ModelBackend, llm: ModelBackend, prompts: Sequence[Sequence[int]],
                    stitch_config: StitchConfig, spec_config: SpecDecConfig, latency: LatencyModel,
                    targets: Optional[Sequence[Optional[Sequence[int]]]] = None,
                    router=None) -> list[ComparisonRow]:
    """Run LLM-only, SLM-only, speculative decoding and stitched decoding on each prompt.

    ``correct`` compares against ``targets`` when given, else against the
    LLM-only output.
    """
    check_shared_vocabulary(slm, llm)
    latency.require_both()
    rows = []
    for i, prompt in enumerate(prompts):
        traces = {
            "llm_only": single_model_decode(llm, LLM, prompt, stitch_config.max_tokens, stitch_config.eos_token),
            "slm_only": single_model_decode(slm, SLM, prompt, stitch_config.max_tokens, stitch_config.eos_token),
            "speculative": speculative_decode(slm, llm, prompt, spec_config)[2],
            "rstitch": stitch_decode(slm, llm, prompt, stitch_config, router=router),
        }
        reference = traces["llm_only"].output
        if targets is not None and targets[i] is not None:
            reference = tuple(targets[i])
        base = trajectory_latency(traces["llm_only"], latency)
        for method in METHODS:
            tr = traces[method]
            lat = trajectory_latency(tr, latency)
            counts = tr.tokens_by_role()
            rows.append(ComparisonRow(i, method, tr.output == tuple(reference), counts[SLM], counts[LLM],
                                      lat, base / lat if lat > 0 else float("inf"), tr.output))
    return rows


def write_comparison_csv(rows: Sequence[ComparisonRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["prompt_id", "method", "correct", "tokens_slm", "tokens_llm", "tokens_total",
                    "latency_ms", "speedup_vs_llm"])
        for r in rows:
            w.writerow([r.prompt_id, r.method, int(r.correct), r.tokens_slm, r.tokens_llm, r.tokens_total,
                        f"{r.latency_ms:.9g}", f"{r.speedup_vs_llm:.9g}"])
