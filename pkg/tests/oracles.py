"""Independent reference implementations the tests compare against.

Nothing here touches KV caches: every distribution is recomputed from the
full context, and the switching rule is applied literally.
"""
import math
from collections import Counter

from rstitch.core import Action, ModelRole

SLM, LLM = ModelRole.SLM, ModelRole.LLM


def entropy_by_hand(probs):
    V = len(probs)
    return math.fsum(-p * math.log(p) for p in probs if p > 0) / math.log(V)


def argmax_lowest(probs):
    best = 0
    for i, p in enumerate(probs):
        if p > probs[best]:
            best = i
    return best


def reference_stitch(slm, llm, prompt, tau, max_tokens, eos):
    """Cache-free greedy stitched decoding. Returns (output, kept roles, discard positions)."""
    models = {SLM: slm, LLM: llm}
    out, roles, discards = [], [], []
    active = SLM
    while len(out) < max_tokens:
        probs = list(models[active].distribution(list(prompt) + out).probs)
        h = min(max(entropy_by_hand(probs), 0.0), 1.0)
        tok = argmax_lowest(probs)
        if active is SLM and h > tau:
            discards.append(len(out))
            active = LLM
            continue
        out.append(tok)
        roles.append(active)
        if tok == eos:
            break
        if active is LLM and h <= tau:
            active = SLM
    return out, roles, discards


def reference_greedy(model, prompt, max_tokens, eos):
    out = []
    while len(out) < max_tokens:
        tok = argmax_lowest(list(model.distribution(list(prompt) + out).probs))
        out.append(tok)
        if tok == eos:
            break
    return out


def cache_accounting(trace, final_lens):
    """Replay per-model cache counters from the trace alone.

    Returns a list of violations (empty when the partial-prefill contract holds):
    counters must line up step to step, the replayed final counter must match
    the decoder's, sum(prefill spans) + steps - rollbacks must equal it, and no
    position may be processed twice unless it was rolled back in between.
    """
    problems = []
    for role in (SLM, LLM):
        L = 0
        seen = Counter()
        span_sum = n_steps = n_rollbacks = 0
        for s in trace.steps:
            if s.role is not role:
                continue
            if s.kv_before != L:
                problems.append(f"{role.value} step {s.index}: kv_before {s.kv_before} != replayed {L}")
            if s.prefill_span > 0:
                positions = range(s.kv_before, s.kv_before + s.prefill_span + 1)
            else:
                positions = [s.kv_before]
            for pos in positions:
                seen[pos] += 1
                if seen[pos] > 1:
                    problems.append(f"{role.value}: position {pos} processed twice")
            L = s.kv_before + s.prefill_span + 1
            span_sum += s.prefill_span
            n_steps += 1
            if s.action is Action.DISCARD_AND_SWITCH:
                L -= 1
                n_rollbacks += 1
                seen[L] -= 1
        if L != final_lens[role]:
            problems.append(f"{role.value}: replayed length {L} != final {final_lens[role]}")
        if span_sum + n_steps - n_rollbacks != final_lens[role]:
            problems.append(f"{role.value}: spans+steps-rollbacks != final length")
    return problems
