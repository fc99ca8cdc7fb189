"""Autoregressive model backends with explicit KV-cache bookkeeping.

The toy backends are pure functions of their parameters and the context, so a
cache only needs to remember how many context positions a model has processed.
``prefill``, ``decode_step`` and ``rollback_one`` enforce the contract a real
cache would impose: never reprocess a cached position, never skip one.
"""
from __future__ import annotations

import abc
import json
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .core import ModelRole, ProbabilityDistribution, Vocabulary, validate_distribution
from .errors import CacheAhead, CacheGap, EmptyCache, StaleCache


@dataclass(frozen=True)
class KvCacheState:
    owner: ModelRole
    cached_len: int = 0

    def __post_init__(self):
        if self.cached_len < 0:
            raise ValueError("cached_len must be non-negative")


class ModelBackend(abc.ABC):
    vocabulary: Vocabulary
    role: Optional[ModelRole] = None

    @abc.abstractmethod
    def distribution(self, context: Sequence[int]) -> ProbabilityDistribution:
        """Next-token distribution conditioned on the whole context."""


class ScriptedModel(ModelBackend):
    """Lookup-table model: the longest stored suffix of the context (up to
    ``order`` tokens) selects the distribution, otherwise uniform."""

    def __init__(self, vocabulary: Union[Vocabulary, int], order: int,
                 entries: Optional[dict] = None, role: Optional[ModelRole] = None):
        if isinstance(vocabulary, int):
            vocabulary = Vocabulary(vocabulary)
        if order < 0:
            raise ValueError("order must be non-negative")
        self.vocabulary = vocabulary
        self.order = order
        self.role = role
        V = vocabulary.size
        self.uniform = ProbabilityDistribution(np.full(V, 1.0 / V))
        self.table: dict[tuple[int, ...], ProbabilityDistribution] = {}
        for suffix, probs in (entries or {}).items():
            self.set(suffix, probs)

    def set(self, suffix: Sequence[int], probs) -> None:
        suffix = tuple(int(t) for t in suffix)
        if len(suffix) > self.order:
            raise ValueError(f"suffix {suffix} longer than order {self.order}")
        for t in suffix:
            self.vocabulary.check_token(t)
        if not isinstance(probs, ProbabilityDistribution):
            probs = validate_distribution(probs, self.vocabulary.size)
        elif probs.size != self.vocabulary.size:
            probs = validate_distribution(probs.probs, self.vocabulary.size)
        self.table[suffix] = probs

    def distribution(self, context: Sequence[int]) -> ProbabilityDistribution:
        n = len(context)
        for k in range(min(self.order, n), -1, -1):
            hit = self.table.get(tuple(context[n - k:]))
            if hit is not None:
                return hit
        return self.uniform

    @classmethod
    def from_json(cls, path, role: Optional[ModelRole] = None) -> "ScriptedModel":
        doc = json.loads(Path(path).read_text())
        return cls.from_dict(doc, role=role)

    @classmethod
    def from_dict(cls, doc: dict, role: Optional[ModelRole] = None) -> "ScriptedModel":
        if doc.get("default", "uniform") != "uniform":
            raise ValueError("only the uniform default is supported")
        entries = doc["entries"]
        V = doc.get("vocab_size")
        if V is None:
            if not entries:
                raise ValueError("vocab_size is required when there are no entries")
            V = len(entries[0]["probs"])
        model = cls(Vocabulary(int(V)), int(doc["order"]), role=role)
        for e in entries:
            model.set(e["suffix"], e["probs"])
        return model

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "default": "uniform",
            "vocab_size": self.vocabulary.size,
            "entries": [{"suffix": list(s), "probs": d.probs.tolist()} for s, d in self.table.items()],
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))


class NGramModel(ModelBackend):
    """Add-alpha smoothed n-gram model; every emitted distribution is fully supported."""

    def __init__(self, vocabulary: Union[Vocabulary, int], order: int, alpha: float = 1.0,
                 role: Optional[ModelRole] = None):
        if isinstance(vocabulary, int):
            vocabulary = Vocabulary(vocabulary)
        if order < 1:
            raise ValueError("order must be >= 1")
        if not alpha > 0:
            raise ValueError("alpha must be > 0")
        self.vocabulary = vocabulary
        self.order = order
        self.alpha = float(alpha)
        self.role = role
        self.counts: dict[tuple[int, ...], Counter] = defaultdict(Counter)
        self._memo: dict[tuple[int, ...], ProbabilityDistribution] = {}

    def fit(self, corpus: Sequence[int]) -> "NGramModel":
        h = self.order - 1
        for t in corpus:
            self.vocabulary.check_token(int(t))
        for i in range(h, len(corpus)):
            ctx = tuple(int(t) for t in corpus[i - h:i])
            self.counts[ctx][int(corpus[i])] += 1
        self._memo.clear()
        return self

    @classmethod
    def from_corpus_file(cls, path, vocab_size: int, order: int, alpha: float = 1.0,
                         role: Optional[ModelRole] = None) -> "NGramModel":
        tokens = [int(x) for x in Path(path).read_text().split()]
        return cls(vocab_size, order, alpha, role=role).fit(tokens)

    def _key(self, context: Sequence[int]) -> tuple[int, ...]:
        h = self.order - 1
        if h == 0:
            return ()
        return tuple(context[-h:]) if len(context) >= h else tuple(context)

    def distribution(self, context: Sequence[int]) -> ProbabilityDistribution:
        key = self._key(context)
        hit = self._memo.get(key)
        if hit is None:
            V = self.vocabulary.size
            c = np.full(V, self.alpha)
            for tok, n in self.counts.get(key, {}).items():
                c[tok] += n
            hit = self._memo[key] = ProbabilityDistribution(c / c.sum())
        return hit


# -- cache operations -------------------------------------------------------

def prefill(backend: ModelBackend, cache: KvCacheState, context: Sequence[int],
            from_index: int) -> tuple[KvCacheState, ProbabilityDistribution]:
    """Process ``context[from_index:]`` and predict the next token.

    The resulting counter is ``len(context) + 1``: it also reserves the slot of
    the token being generated.
    """
    if from_index < cache.cached_len:
        raise CacheAhead(f"from_index {from_index} < cached {cache.cached_len}")
    if from_index > cache.cached_len:
        raise CacheGap(f"from_index {from_index} > cached {cache.cached_len}")
    if from_index >= len(context):
        raise CacheGap(f"nothing to prefill: from_index {from_index}, context {len(context)}")
    dist = backend.distribution(context)
    return KvCacheState(cache.owner, len(context) + 1), dist


def decode_step(backend: ModelBackend, cache: KvCacheState,
                context: Sequence[int]) -> tuple[KvCacheState, ProbabilityDistribution]:
    """One cached decode step; the cache must already cover every context position."""
    if cache.cached_len != len(context):
        raise StaleCache(f"cache holds {cache.cached_len} positions, context has {len(context)}")
    dist = backend.distribution(context)
    return KvCacheState(cache.owner, cache.cached_len + 1), dist


def rollback_one(cache: KvCacheState) -> KvCacheState:
    if cache.cached_len < 1:
        raise EmptyCache("cannot roll back an empty cache")
    return KvCacheState(cache.owner, cache.cached_len - 1)


def advance(backend: ModelBackend, cache: KvCacheState, context: Sequence[int]):
    """Prefill the missing span if the cache lags, else decode.

    Returns ``(cache, dist, prefill_span)`` with ``prefill_span == 0`` for a decode.
    """
    if cache.cached_len < len(context):
        span = len(context) - cache.cached_len
        cache, dist = prefill(backend, cache, context, cache.cached_len)
        return cache, dist, span
    cache, dist = decode_step(backend, cache, context)
    return cache, dist, 0


# -- token selection --------------------------------------------------------

@dataclass(frozen=True)
class Greedy:
    pass


@dataclass(frozen=True)
class Sample:
    seed: int = 0

    def make_rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


SelectionMode = Union[Greedy, Sample]
GREEDY = Greedy()


def select_token(dist: ProbabilityDistribution, mode: SelectionMode = GREEDY,
                 rng: Optional[np.random.Generator] = None) -> int:
    """Greedy picks the lowest-index argmax; sampling draws one uniform from ``rng``."""
    if isinstance(mode, Greedy):
        return int(np.argmax(dist.probs))
    if rng is None:
        rng = mode.make_rng()
    return inverse_cdf(dist.probs, rng.random())


def inverse_cdf(probs: np.ndarray, u: float) -> int:
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    if idx >= probs.shape[0]:
        # cumsum can round to just below u; fall back to the last supported token
        idx = int(np.flatnonzero(probs > 0)[-1])
    return idx
