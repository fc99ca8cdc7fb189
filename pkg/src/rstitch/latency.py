"""Analytic per-step latency estimators and their least-squares fits.

Prefill cost is quadratic in the processed span and bilinear in span x cache
size; a decode step is linear in the cache size. All values are milliseconds.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .core import GenerationTrace, ModelRole
from .errors import MissingCoefficients, RankDeficient

log = logging.getLogger(__name__)

COND_LIMIT = 1e12
FIXTURES = ("slm-1.5b", "llm-7b", "llm-14b")


@dataclass(frozen=True)
class ProfilingSample:
    kind: str  # "prefill" | "decode"
    n_inf: int
    n_kv: int
    latency_ms: float

    def __post_init__(self):
        kind = self.kind.lower()
        if kind not in ("prefill", "decode"):
            raise ValueError(f"unknown sample kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.n_inf < 1 or self.n_kv < 0:
            raise ValueError("n_inf must be >= 1 and n_kv >= 0")
        if kind == "decode" and self.n_inf != 1:
            raise ValueError("decode samples process exactly one token")
        if not self.latency_ms > 0:
            raise ValueError("latency must be positive")


@dataclass(frozen=True)
class PrefillCoefficients:
    a: float
    b: float
    c: float
    d: float

    def scaled(self, k: float) -> "PrefillCoefficients":
        return PrefillCoefficients(k * self.a, k * self.b, k * self.c, k * self.d)

    def as_decode(self) -> "DecodeCoefficients":
        """The one-token specialization: slope ``a``, intercept ``b + c + d``."""
        return DecodeCoefficients(self.a, self.b + self.c + self.d)


@dataclass(frozen=True)
class DecodeCoefficients:
    slope: float
    intercept: float


@dataclass(frozen=True)
class RoleLatency:
    prefill: PrefillCoefficients
    decode: DecodeCoefficients


@dataclass
class LatencyModel:
    roles: dict[ModelRole, RoleLatency]
    clamped: int = field(default=0, compare=False)

    def __post_init__(self):
        self.roles = {ModelRole(r): v for r, v in self.roles.items()}

    def __getitem__(self, role: ModelRole) -> RoleLatency:
        try:
            return self.roles[role]
        except KeyError:
            raise MissingCoefficients(f"no latency coefficients for {role.value}") from None

    def require_both(self) -> "LatencyModel":
        for role in ModelRole:
            self[role]
        return self

    def to_dict(self) -> dict:
        return {
            role.value.lower(): {
                "prefill": {"a": rl.prefill.a, "b": rl.prefill.b, "c": rl.prefill.c, "d": rl.prefill.d},
                "decode": {"slope": rl.decode.slope, "intercept": rl.decode.intercept},
            }
            for role, rl in self.roles.items()
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "LatencyModel":
        roles = {}
        for key, body in doc.items():
            pre = PrefillCoefficients(**{k: float(body["prefill"][k]) for k in "abcd"})
            dec = body.get("decode")
            dec = pre.as_decode() if dec is None else DecodeCoefficients(float(dec["slope"]), float(dec["intercept"]))
            roles[ModelRole(key.upper())] = RoleLatency(pre, dec)
        return cls(roles)

    @classmethod
    def from_json(cls, *paths) -> "LatencyModel":
        """Load and merge one or more role maps (later files win per role)."""
        merged = {}
        for p in paths:
            merged.update(json.loads(Path(p).read_text()))
        return cls.from_dict(merged)


def load_fixture(name: str, role: Optional[ModelRole] = None) -> RoleLatency:
    """Published coefficient sets: ``slm-1.5b``, ``llm-7b``, ``llm-14b``."""
    doc = json.loads(resources.files("rstitch.fixtures").joinpath(f"{name}.json").read_text())
    (body,) = LatencyModel.from_dict(doc).roles.values()
    return body


def fixture_model(slm: str = "slm-1.5b", llm: str = "llm-14b") -> LatencyModel:
    return LatencyModel({ModelRole.SLM: load_fixture(slm), ModelRole.LLM: load_fixture(llm)})


# -- fitting ----------------------------------------------------------------

def _lstsq(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    if X.shape[0] < X.shape[1]:
        raise RankDeficient(f"{X.shape[0]} samples for {X.shape[1]} coefficients")
    # column scaling keeps the N_inf*N_kv and N_inf^2 columns from dominating
    scale = np.abs(X).max(axis=0)
    scale[scale == 0] = 1.0
    Xs = X / scale
    if np.linalg.matrix_rank(Xs) < X.shape[1] or np.linalg.cond(Xs) > COND_LIMIT:
        raise RankDeficient("feature matrix is rank deficient")
    coef, *_ = np.linalg.lstsq(Xs, y, rcond=None)
    return coef / scale


def prefill_features(n_inf, n_kv) -> np.ndarray:
    n_inf = np.asarray(n_inf, dtype=np.float64)
    n_kv = np.asarray(n_kv, dtype=np.float64)
    return np.column_stack([n_inf * n_kv, n_inf ** 2, n_inf, np.ones_like(n_inf)])


def fit_prefill(samples: Sequence[ProfilingSample]) -> PrefillCoefficients:
    X = prefill_features([s.n_inf for s in samples], [s.n_kv for s in samples])
    y = np.array([s.latency_ms for s in samples])
    a, b, c, d = _lstsq(X, y)
    return PrefillCoefficients(float(a), float(b), float(c), float(d))


def fit_decode(samples: Sequence[ProfilingSample]) -> DecodeCoefficients:
    kv = np.array([s.n_kv for s in samples], dtype=np.float64)
    X = np.column_stack([kv, np.ones_like(kv)])
    y = np.array([s.latency_ms for s in samples])
    slope, intercept = _lstsq(X, y)
    return DecodeCoefficients(float(slope), float(intercept))


def fit_role(samples: Sequence[ProfilingSample]) -> RoleLatency:
    """Fit prefill on prefill samples; decode on decode samples, or derive it
    from the prefill fit when no decode samples exist."""
    pre = fit_prefill([s for s in samples if s.kind == "prefill"])
    dec_samples = [s for s in samples if s.kind == "decode"]
    dec = fit_decode(dec_samples) if dec_samples else pre.as_decode()
    return RoleLatency(pre, dec)


def residual_rms(role: RoleLatency, samples: Sequence[ProfilingSample]) -> float:
    if not samples:
        return 0.0
    err = []
    for s in samples:
        if s.kind == "prefill":
            pred = estimate_prefill(role.prefill, s.n_inf, s.n_kv)
        else:
            pred = estimate_decode(role.decode, s.n_kv)
        err.append(pred - s.latency_ms)
    return float(np.sqrt(np.mean(np.square(err))))


def read_profiling_csv(path) -> list[ProfilingSample]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"kind", "n_inf", "n_kv", "latency_ms"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"profiling CSV lacks columns {sorted(missing)}")
        return [ProfilingSample(r["kind"], int(r["n_inf"]), int(r["n_kv"]), float(r["latency_ms"])) for r in reader]


def write_profiling_csv(samples: Iterable[ProfilingSample], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "n_inf", "n_kv", "latency_ms"])
        for s in samples:
            w.writerow([s.kind, s.n_inf, s.n_kv, repr(s.latency_ms)])


# -- estimation -------------------------------------------------------------

def estimate_prefill(coeffs: PrefillCoefficients, n_inf: int, n_kv: int) -> float:
    return coeffs.a * n_inf * n_kv + coeffs.b * n_inf * n_inf + coeffs.c * n_inf + coeffs.d


def estimate_decode(coeffs: DecodeCoefficients, n_kv: int) -> float:
    return coeffs.slope * n_kv + coeffs.intercept


def step_latency(role: RoleLatency, prefill_span: int, kv_before: int) -> float:
    if prefill_span > 0:
        return estimate_prefill(role.prefill, prefill_span, kv_before)
    return estimate_decode(role.decode, kv_before)


def trajectory_latency(trace: GenerationTrace, model: LatencyModel) -> float:
    """Sum of per-step estimates, discarded steps included. Negative
    extrapolations are clamped to zero and counted on ``model.clamped``."""
    total = 0.0
    for s in trace.steps:
        ms = step_latency(model[s.role], s.prefill_span, s.kv_before)
        if ms < 0:
            model.clamped += 1
            log.warning("negative latency estimate %.3f ms clamped (step %d, %s)", ms, s.index, s.role.value)
            ms = 0.0
        total += ms
    return total
