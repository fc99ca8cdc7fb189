"""Entropy-guided token-level stitching between a small and a large model."""
from __future__ import annotations

import enum
import math
from typing import Optional, Sequence

import numpy as np

from .backends import (
    GREEDY,
    KvCacheState,
    ModelBackend,
    Sample,
    SelectionMode,
    advance,
    rollback_one,
    select_token,
)
from .core import (
    Action,
    GenerationTrace,
    ModelRole,
    ProbabilityDistribution,
    RouterChoice,
    RouterStep,
    StepRecord,
    StitchConfig,
    Termination,
    Variant,
)
from .errors import BackendFailure, CacheError, VocabularyMismatch
from .policy import RouterPolicy, router_features

SLM, LLM = ModelRole.SLM, ModelRole.LLM


class SwitchAction(enum.Enum):
    CONTINUE_ACTIVE = "ContinueActive"
    SLM_TO_LLM = "SlmToLlm"
    LLM_TO_SLM = "LlmToSlm"


def normalized_entropy(dist: ProbabilityDistribution, vocab_size: Optional[int] = None) -> float:
    """Shannon entropy (nats) divided by log V; zero-probability terms contribute 0."""
    p = dist.probs if isinstance(dist, ProbabilityDistribution) else np.asarray(dist, dtype=np.float64)
    V = p.shape[0] if vocab_size is None else vocab_size
    if V < 2:
        raise ValueError("normalized entropy needs V >= 2")
    nz = p[p > 0]
    h = float(-(nz * np.log(nz)).sum()) / math.log(V)
    return min(max(h, 0.0), 1.0)


def switch_decision(entropy: float, tau: float, active: ModelRole) -> SwitchAction:
    if active is SLM and entropy > tau:
        return SwitchAction.SLM_TO_LLM
    if active is LLM and entropy <= tau:
        return SwitchAction.LLM_TO_SLM
    return SwitchAction.CONTINUE_ACTIVE


def check_shared_vocabulary(a: ModelBackend, b: ModelBackend) -> int:
    if a.vocabulary.size != b.vocabulary.size:
        raise VocabularyMismatch(f"vocabulary sizes differ: {a.vocabulary.size} vs {b.vocabulary.size}")
    return a.vocabulary.size


def _step(backend: ModelBackend, cache: KvCacheState, context, t: int):
    try:
        return advance(backend, cache, context)
    except CacheError:
        raise
    except Exception as exc:
        raise BackendFailure(t, exc) from exc


class StitchDecoder:
    """One decoding session. Holds both caches so callers can inspect them afterwards."""

    def __init__(self, slm: ModelBackend, llm: ModelBackend, config: StitchConfig,
                 router: Optional[RouterPolicy] = None, mode: SelectionMode = GREEDY,
                 router_rng: Optional[np.random.Generator] = None):
        self.V = check_shared_vocabulary(slm, llm)
        if config.variant is Variant.ROUTED and router is None:
            raise ValueError("the routed variant needs a router policy")
        self.models = {SLM: slm, LLM: llm}
        self.config = config
        self.router = router
        self.mode = mode
        # None: deterministic argmax routing; otherwise routing actions are sampled
        self.router_rng = router_rng
        self.caches = {SLM: KvCacheState(SLM), LLM: KvCacheState(LLM)}

    def _route(self, t, entropy, n_kept, n_kept_slm, kept_entropies) -> RouterStep:
        feats = router_features(entropy, False, n_kept, self.config.max_tokens, n_kept_slm,
                                kept_entropies, self.caches[SLM].cached_len)
        p = self.router.p_switch(feats)
        if self.router_rng is None:
            switch = p > 0.5
        else:
            switch = self.router_rng.random() < p
        choice = RouterChoice.SWITCH_LLM if switch else RouterChoice.STAY_SLM
        return RouterStep(t, tuple(feats.tolist()), choice, self.router.action_logprob(feats, choice))

    def run(self, prompt: Sequence[int]) -> GenerationTrace:
        cfg = self.config
        for tok in prompt:
            self.models[SLM].vocabulary.check_token(tok)
        rng = self.mode.make_rng() if isinstance(self.mode, Sample) else None
        context = list(prompt)
        output: list[int] = []
        steps: list[StepRecord] = []
        decisions: list[RouterStep] = []
        kept_entropies: list[float] = []
        n_kept_slm = 0
        active = SLM
        terminated = Termination.BUDGET
        t = 0
        while len(output) < cfg.max_tokens:
            kv_before = self.caches[active].cached_len
            cache, dist, span = _step(self.models[active], self.caches[active], context, t)
            self.caches[active] = cache
            h = normalized_entropy(dist, self.V)
            tok = select_token(dist, self.mode, rng)
            decision = switch_decision(h, cfg.tau, active)
            routed = None
            action = Action.KEEP
            next_active = active
            if decision is SwitchAction.SLM_TO_LLM:
                switch = True
                if cfg.variant is Variant.ROUTED:
                    rstep = self._route(t, h, len(output), n_kept_slm, kept_entropies)
                    decisions.append(rstep)
                    routed = rstep.action
                    switch = routed is RouterChoice.SWITCH_LLM
                if switch:
                    steps.append(StepRecord(t, SLM, None, h, Action.DISCARD_AND_SWITCH, span, kv_before, routed))
                    self.caches[SLM] = rollback_one(self.caches[SLM])
                    active = LLM
                    t += 1
                    continue
            elif decision is SwitchAction.LLM_TO_SLM:
                action = Action.KEEP_AND_HAND_BACK
                next_active = SLM
            steps.append(StepRecord(t, active, tok, h, action, span, kv_before, routed))
            output.append(tok)
            context.append(tok)
            kept_entropies.append(h)
            n_kept_slm += active is SLM
            t += 1
            if tok == cfg.eos_token:
                terminated = Termination.EOS
                break
            active = next_active
        return GenerationTrace(tuple(prompt), tuple(steps), tuple(output), terminated,
                               tau=cfg.tau, variant=cfg.variant.value, decisions=tuple(decisions))


def stitch_decode(slm: ModelBackend, llm: ModelBackend, prompt: Sequence[int], config: StitchConfig,
                  router: Optional[RouterPolicy] = None, mode: SelectionMode = GREEDY,
                  router_rng: Optional[np.random.Generator] = None) -> GenerationTrace:
    return StitchDecoder(slm, llm, config, router, mode, router_rng).run(prompt)


def single_model_decode(backend: ModelBackend, role: ModelRole, prompt: Sequence[int], max_tokens: int,
                        eos_token: int, mode: SelectionMode = GREEDY) -> GenerationTrace:
    """Plain autoregressive decoding with one model (the LLM-only / SLM-only baselines)."""
    rng = mode.make_rng() if isinstance(mode, Sample) else None
    V = backend.vocabulary.size
    cache = KvCacheState(role)
    context = list(prompt)
    steps = []
    terminated = Termination.BUDGET
    for t in range(max_tokens):
        kv_before = cache.cached_len
        cache, dist, span = _step(backend, cache, context, t)
        tok = select_token(dist, mode, rng)
        steps.append(StepRecord(t, role, tok, normalized_entropy(dist, V), Action.KEEP, span, kv_before))
        context.append(tok)
        if tok == eos_token:
            terminated = Termination.EOS
            break
    output = tuple(context[len(prompt):])
    return GenerationTrace(tuple(prompt), tuple(steps), output, terminated, variant=role.value + "Only")


def token_consistency(slm: ModelBackend, llm: ModelBackend, prompts: Sequence[Sequence[int]],
                      max_tokens: int, eos_token: int) -> float:
    """Fraction of positions on the LLM's greedy trajectories where the SLM's
    greedy token matches the LLM's, given the same prefix."""
    check_shared_vocabulary(slm, llm)
    matches = total = 0
    for prompt in prompts:
        trace = single_model_decode(llm, LLM, prompt, max_tokens, eos_token)
        context = list(prompt)
        for tok in trace.output:
            matches += select_token(slm.distribution(context)) == tok
            total += 1
            context.append(tok)
    return matches / total if total else 1.0
