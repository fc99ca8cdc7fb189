"""Logistic router policy over a fixed engineered feature vector."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import RouterChoice

FEATURE_NAMES = (
    "entropy",
    "active_is_llm",
    "position_frac",
    "slm_kept_frac",
    "recent_entropy_mean",
    "slm_kv_log_frac",
    "bias",
)
N_FEATURES = len(FEATURE_NAMES)
SCHEMA_VERSION = 1
RECENT_WINDOW = 8


def router_features(entropy: float, active_is_llm: bool, n_kept: int, max_tokens: int,
                    n_kept_slm: int, recent_entropies: Sequence[float], slm_kv: int) -> np.ndarray:
    recent = recent_entropies[-RECENT_WINDOW:]
    return np.array([
        entropy,
        1.0 if active_is_llm else 0.0,
        n_kept / max_tokens,
        n_kept_slm / n_kept if n_kept else 0.0,
        float(np.mean(recent)) if len(recent) else 0.0,
        math.log1p(slm_kv) / math.log1p(max_tokens),
        1.0,
    ])


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _log_sigmoid(z: float) -> float:
    if z >= 0:
        return -math.log1p(math.exp(-z))
    return z - math.log1p(math.exp(z))


@dataclass(frozen=True, eq=False)
class RouterPolicy:
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.shape != (N_FEATURES,):
            raise ValueError(f"policy needs {N_FEATURES} weights, got shape {w.shape}")
        if not np.isfinite(w).all():
            raise ValueError("policy weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def zeros(cls) -> "RouterPolicy":
        return cls(np.zeros(N_FEATURES))

    def p_switch(self, features) -> float:
        return router_probability(self, features)

    def action_prob(self, features, action: RouterChoice) -> float:
        p = self.p_switch(features)
        return p if action is RouterChoice.SWITCH_LLM else 1.0 - p

    def action_logprob(self, features, action: RouterChoice) -> float:
        z = float(self.weights @ np.asarray(features, dtype=np.float64))
        return _log_sigmoid(z if action is RouterChoice.SWITCH_LLM else -z)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps({
            "schema_version": SCHEMA_VERSION,
            "features": list(FEATURE_NAMES),
            "weights": [float(f"{w:.17g}") for w in self.weights],
        }, indent=2) + "\n")

    @classmethod
    def from_json(cls, path) -> "RouterPolicy":
        doc = json.loads(Path(path).read_text())
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported policy schema {doc.get('schema_version')!r}")
        return cls(np.asarray(doc["weights"], dtype=np.float64))


def router_probability(policy: RouterPolicy, features) -> float:
    """Probability of switching to the LLM."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape != (N_FEATURES,) or not np.isfinite(x).all():
        raise ValueError("features must be a finite vector of length 7")
    return _sigmoid(float(policy.weights @ x))
