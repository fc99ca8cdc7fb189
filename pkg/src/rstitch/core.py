"""Domain types shared by the decoding engine, the latency model and the router."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import NegativeProbability, NotNormalized, WrongLength

NORMALIZATION_TOL = 1e-9


class ModelRole(str, enum.Enum):
    SLM = "SLM"
    LLM = "LLM"


class Action(str, enum.Enum):
    KEEP = "Keep"
    DISCARD_AND_SWITCH = "DiscardAndSwitch"
    KEEP_AND_HAND_BACK = "KeepAndHandBack"


class RouterChoice(str, enum.Enum):
    STAY_SLM = "StaySLM"
    SWITCH_LLM = "SwitchLLM"


class Variant(str, enum.Enum):
    ENTROPY_ONLY = "EntropyOnly"
    ROUTED = "Routed"


class Termination(str, enum.Enum):
    EOS = "Eos"
    BUDGET = "Budget"


@dataclass(frozen=True)
class Vocabulary:
    size: int
    symbols: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.size < 2:
            raise ValueError(f"vocabulary size must be >= 2, got {self.size}")
        if self.symbols is not None and len(self.symbols) != self.size:
            raise ValueError("symbol table length does not match vocabulary size")

    def check_token(self, token: int) -> int:
        if not 0 <= token < self.size:
            raise ValueError(f"token {token} outside vocabulary of size {self.size}")
        return token

    def render(self, tokens: Iterable[int]) -> str:
        if self.symbols is None:
            return " ".join(str(t) for t in tokens)
        return "".join(self.symbols[t] for t in tokens)


@dataclass(frozen=True, eq=False)
class ProbabilityDistribution:
    """Next-token distribution over a finite vocabulary (read-only float64 array)."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64)
        if p.ndim != 1:
            raise WrongLength("distribution must be a 1-d vector")
        if (p < 0).any():
            raise NegativeProbability(f"negative entry {p.min()!r}")
        total = p.sum()
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise NotNormalized(f"entries sum to {total!r}")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def size(self) -> int:
        return self.probs.shape[0]

    def __len__(self):
        return self.probs.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ProbabilityDistribution):
            return NotImplemented
        return np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash(self.probs.tobytes())


def validate_distribution(probs: Sequence[float], vocab_size: int) -> ProbabilityDistribution:
    if len(probs) != vocab_size:
        raise WrongLength(f"expected {vocab_size} entries, got {len(probs)}")
    return ProbabilityDistribution(np.asarray(probs, dtype=np.float64))


@dataclass(frozen=True)
class StepRecord:
    index: int
    role: ModelRole
    token: Optional[int]
    entropy: float
    action: Action
    prefill_span: int = 0
    kv_before: int = 0
    router: Optional[RouterChoice] = None

    def __post_init__(self):
        if not 0.0 <= self.entropy <= 1.0:
            raise ValueError(f"entropy {self.entropy} outside [0, 1]")
        if (self.action is Action.DISCARD_AND_SWITCH) != (self.token is None):
            raise ValueError("exactly the discarded steps carry no token")
        if self.prefill_span < 0 or self.kv_before < 0:
            raise ValueError("prefill span and cache size must be non-negative")

    @property
    def kept(self) -> bool:
        return self.token is not None


@dataclass(frozen=True)
class RouterStep:
    """One router decision point: the features seen, the action taken and its
    log-probability under the policy that sampled it."""

    step: int
    features: tuple[float, ...]
    action: RouterChoice
    logprob: float


@dataclass(frozen=True)
class GenerationTrace:
    prompt: tuple[int, ...]
    steps: tuple[StepRecord, ...]
    output: tuple[int, ...]
    terminated: Termination
    tau: Optional[float] = None
    variant: str = Variant.ENTROPY_ONLY.value
    decisions: tuple[RouterStep, ...] = field(default=(), compare=False)

    def __post_init__(self):
        kept = tuple(s.token for s in self.steps if s.kept)
        if kept != tuple(self.output):
            raise ValueError("output does not match the kept tokens of the steps")

    def kept_steps(self) -> list[StepRecord]:
        return [s for s in self.steps if s.kept]

    def tokens_by_role(self) -> dict[ModelRole, int]:
        counts = {ModelRole.SLM: 0, ModelRole.LLM: 0}
        for s in self.steps:
            if s.kept:
                counts[s.role] += 1
        return counts

    def discards(self) -> int:
        return sum(1 for s in self.steps if not s.kept)


@dataclass(frozen=True)
class StitchConfig:
    tau: float
    max_tokens: int
    eos_token: int
    variant: Variant = Variant.ENTROPY_ONLY

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        object.__setattr__(self, "variant", Variant(self.variant))


# -- JSONL trace format -----------------------------------------------------

def _f9(x: Optional[float]):
    if x is None:
        return None
    return float(f"{x:.9g}")


def trace_to_jsonl(trace: GenerationTrace) -> str:
    lines = [json.dumps({"prompt": list(trace.prompt), "tau": _f9(trace.tau), "variant": trace.variant})]
    for s in trace.steps:
        lines.append(json.dumps({
            "t": s.index,
            "role": s.role.value,
            "token": s.token,
            "entropy": _f9(s.entropy),
            "action": s.action.value,
            "prefill_span": s.prefill_span,
            "kv_before": s.kv_before,
            "router": None if s.router is None else s.router.value,
        }))
    lines.append(json.dumps({"output": list(trace.output), "terminated": trace.terminated.value}))
    return "\n".join(lines) + "\n"


def trace_from_jsonl(text: str) -> GenerationTrace:
    rows = [json.loads(line) for line in text.splitlines() if line.strip()]
    if len(rows) < 2:
        raise ValueError("trace needs a header and a trailer")
    header, body, trailer = rows[0], rows[1:-1], rows[-1]
    steps = tuple(
        StepRecord(
            index=r["t"],
            role=ModelRole(r["role"]),
            token=r["token"],
            entropy=r["entropy"],
            action=Action(r["action"]),
            prefill_span=r["prefill_span"],
            kv_before=r["kv_before"],
            router=None if r["router"] is None else RouterChoice(r["router"]),
        )
        for r in body
    )
    return GenerationTrace(
        prompt=tuple(header["prompt"]),
        steps=steps,
        output=tuple(trailer["output"]),
        terminated=Termination(trailer["terminated"]),
        tau=header["tau"],
        variant=header["variant"],
    )


def write_trace(trace: GenerationTrace, path) -> None:
    Path(path).write_text(trace_to_jsonl(trace))


def read_trace(path) -> GenerationTrace:
    return trace_from_jsonl(Path(path).read_text())
