"""Constructed ScriptedModel fixtures for oracle tests, sweeps and router training."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .backends import ScriptedModel
from .core import ModelRole, Vocabulary
from .latency import LatencyModel, PrefillCoefficients, RoleLatency

EOS = 0


def peaked(V: int, hot: int, spread: float) -> np.ndarray:
    """Mass ``1 - spread`` on ``hot``, the rest split evenly over the other tokens."""
    p = np.full(V, spread / (V - 1))
    p[hot] = 1.0 - spread
    return p / p.sum()


def one_hot(V: int, hot: int) -> np.ndarray:
    p = np.zeros(V)
    p[hot] = 1.0
    return p


def random_distribution(rng: np.random.Generator, V: int) -> np.ndarray:
    """A mix of one-hot, peaked and diffuse distributions so that normalized
    entropies cover the whole unit interval."""
    kind = rng.integers(4)
    if kind == 0:
        return one_hot(V, int(rng.integers(V)))
    if kind == 1:
        return peaked(V, int(rng.integers(V)), float(10 ** rng.uniform(-4, -0.5)))
    alpha = 0.1 if kind == 2 else 2.0
    p = rng.dirichlet(np.full(V, alpha))
    return p / p.sum()


def random_scripted_model(rng: np.random.Generator, V: int, order: int = 2, n_entries: int = 24,
                          role: Optional[ModelRole] = None) -> ScriptedModel:
    model = ScriptedModel(Vocabulary(V), order, role=role)
    if rng.random() < 0.5:
        model.set((), random_distribution(rng, V))
    for _ in range(n_entries):
        k = int(rng.integers(1, order + 1))
        model.set(tuple(int(x) for x in rng.integers(0, V, size=k)), random_distribution(rng, V))
    return model


@dataclass
class RandomCase:
    slm: ScriptedModel
    llm: ScriptedModel
    prompt: tuple[int, ...]
    tau: float
    max_tokens: int
    eos: int


TAU_GRID = tuple(round(0.1 * i, 1) for i in range(11))


def random_case(rng: np.random.Generator) -> RandomCase:
    """Random backend pair and decoding setup: V <= 16, prompt <= 8, budget <= 32."""
    V = int(rng.integers(2, 17))
    order = int(rng.integers(1, 4))
    slm = random_scripted_model(rng, V, order, int(rng.integers(4, 40)), ModelRole.SLM)
    llm = random_scripted_model(rng, V, order, int(rng.integers(4, 40)), ModelRole.LLM)
    prompt = tuple(int(x) for x in rng.integers(0, V, size=int(rng.integers(1, 9))))
    tau = float(TAU_GRID[int(rng.integers(len(TAU_GRID)))])
    return RandomCase(slm, llm, prompt, tau, int(rng.integers(1, 33)), int(rng.integers(V)))


def script_path(model: ScriptedModel, prompt: Sequence[int], tokens: Sequence[int],
                dists: Sequence[np.ndarray]) -> None:
    """Key ``dists[i]`` on the exact context ``prompt + tokens[:i]``."""
    ctx = list(prompt)
    for tok, d in zip(tokens, dists):
        model.set(tuple(ctx), d)
        ctx.append(tok)


def distinct_prompts(rng: np.random.Generator, n: int, V: int, length: int) -> list[tuple[int, ...]]:
    seen, out = set(), []
    while len(out) < n:
        p = tuple(int(x) for x in rng.integers(1, V, size=length))
        if p not in seen:
            seen.add(p)
            out.append(p)
    return out


@dataclass
class ToySuite:
    slm: ScriptedModel
    llm: ScriptedModel
    prompts: list[tuple[int, ...]]
    targets: list[tuple[int, ...]]
    eos: int = EOS

    @property
    def max_len(self) -> int:
        return max(len(t) for t in self.targets)


def _path_order(prompt_len: int, answer_len: int) -> int:
    return prompt_len + answer_len + 1


def sweep_suite(n_prompts: int = 50, V: int = 16, answer_len: int = 24, prompt_len: int = 4,
                seed: int = 0) -> ToySuite:
    """SLM and LLM agree on every argmax token, so outputs coincide for any
    threshold; SLM entropies straddle the default threshold grid."""
    rng = np.random.default_rng(seed)
    order = _path_order(prompt_len, answer_len)
    slm = ScriptedModel(Vocabulary(V), order, role=ModelRole.SLM)
    llm = ScriptedModel(Vocabulary(V), order, role=ModelRole.LLM)
    prompts = distinct_prompts(rng, n_prompts, V, prompt_len)
    targets = []
    for prompt in prompts:
        body = [int(x) for x in rng.integers(1, V, size=answer_len - 1)]
        tokens = body + [EOS]
        sd, ld = [], []
        for tok in tokens:
            spread = 0.0 if rng.random() < 0.4 else float(10 ** rng.uniform(-4, -1.5))
            sd.append(peaked(V, tok, spread))
            ld.append(peaked(V, tok, float(10 ** rng.uniform(-6, -2.5))))
        script_path(slm, prompt, tokens, sd)
        script_path(llm, prompt, tokens, ld)
        targets.append(tuple(tokens))
    return ToySuite(slm, llm, prompts, targets)


def consistency_suite(consistency: float, n_prompts: int = 8, V: int = 16, answer_len: int = 32,
                      prompt_len: int = 4, seed: int = 0) -> ToySuite:
    """Deterministic LLM path; the SLM's greedy token agrees with it at a
    ``consistency`` fraction of positions, spread evenly."""
    rng = np.random.default_rng(seed)
    order = _path_order(prompt_len, answer_len)
    slm = ScriptedModel(Vocabulary(V), order, role=ModelRole.SLM)
    llm = ScriptedModel(Vocabulary(V), order, role=ModelRole.LLM)
    prompts = distinct_prompts(rng, n_prompts, V, prompt_len)
    n_agree = int(round(consistency * answer_len))
    targets = []
    for prompt in prompts:
        tokens = [int(x) for x in rng.integers(1, V, size=answer_len - 1)] + [EOS]
        agree = set(np.linspace(0, answer_len - 1, n_agree).round().astype(int).tolist()) if n_agree else set()
        sd = []
        for i, tok in enumerate(tokens):
            guess = tok if i in agree else 1 + (tok % (V - 1))
            sd.append(one_hot(V, guess))
        script_path(slm, prompt, tokens, sd)
        script_path(llm, prompt, tokens, [one_hot(V, t) for t in tokens])
        targets.append(tuple(tokens))
    return ToySuite(slm, llm, prompts, targets)


def router_suite(kind: str, n_prompts: int = 4, V: int = 8, answer_len: int = 12, prompt_len: int = 3,
                 seed: int = 0) -> ToySuite:
    """Router training tasks.

    ``slm_correct``: every SLM step is uncertain but its argmax is always right,
    so switching only costs latency. ``llm_needed``: at a few uncertain steps the
    SLM's argmax is wrong and only the LLM recovers the target.
    """
    if kind not in ("slm_correct", "llm_needed"):
        raise ValueError(f"unknown router task {kind!r}")
    rng = np.random.default_rng(seed)
    order = _path_order(prompt_len, answer_len)
    slm = ScriptedModel(Vocabulary(V), order, role=ModelRole.SLM)
    llm = ScriptedModel(Vocabulary(V), order, role=ModelRole.LLM)
    prompts = distinct_prompts(rng, n_prompts, V, prompt_len)
    targets = []
    for prompt in prompts:
        tokens = [int(x) for x in rng.integers(1, V, size=answer_len - 1)] + [EOS]
        sd = []
        if kind == "slm_correct":
            for tok in tokens:
                sd.append(peaked(V, tok, 0.4))
        else:
            hard = set(rng.choice(answer_len - 1, size=3, replace=False).tolist())
            for i, tok in enumerate(tokens):
                if i in hard:
                    p = peaked(V, 1 + (tok % (V - 1)), 0.5)
                else:
                    p = one_hot(V, tok)
                sd.append(p)
        script_path(slm, prompt, tokens, sd)
        script_path(llm, prompt, tokens, [one_hot(V, t) for t in tokens])
        targets.append(tuple(tokens))
    return ToySuite(slm, llm, prompts, targets)


def toy_latency_model(llm_factor: float = 8.0) -> LatencyModel:
    """Small-vocabulary stand-in: the LLM costs ``llm_factor`` times the SLM per step."""
    slm = PrefillCoefficients(1e-4, 1e-3, 0.05, 2.0)
    llm = slm.scaled(llm_factor)
    return LatencyModel({
        ModelRole.SLM: RoleLatency(slm, slm.as_decode()),
        ModelRole.LLM: RoleLatency(llm, llm.as_decode()),
    })


def write_prompts(path, prompts: Sequence[Sequence[int]], targets: Optional[Sequence[Sequence[int]]] = None) -> None:
    lines = []
    for i, p in enumerate(prompts):
        line = " ".join(str(t) for t in p)
        if targets is not None:
            line += " | " + " ".join(str(t) for t in targets[i])
        lines.append(line)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_prompts(path) -> tuple[list[tuple[int, ...]], list[Optional[tuple[int, ...]]]]:
    """One prompt per line, optionally followed by ``| target tokens``."""
    prompts, targets = [], []
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            head, sep, tail = line.partition("|")
            prompts.append(tuple(int(x) for x in head.split()))
            targets.append(tuple(int(x) for x in tail.split()) if sep else None)
    return prompts, targets
