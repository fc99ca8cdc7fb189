"""Entropy-guided token-level stitching between a small and a large language model."""
from .backends import GREEDY, Greedy, KvCacheState, NGramModel, Sample, ScriptedModel, decode_step, prefill, rollback_one, select_token
from .core import (
    Action,
    GenerationTrace,
    ModelRole,
    ProbabilityDistribution,
    RouterChoice,
    StepRecord,
    StitchConfig,
    Termination,
    Variant,
    Vocabulary,
    validate_distribution,
)
from .latency import LatencyModel, estimate_decode, estimate_prefill, fit_decode, fit_prefill, trajectory_latency
from .policy import RouterPolicy, router_probability
from .router import DapoConfig, compute_reward, dapo_objective, group_advantages, importance_ratio, train_router
from .specdec import SpecDecConfig, compare_methods, speculative_decode
from .stitch import SwitchAction, normalized_entropy, stitch_decode, switch_decision, token_consistency

__version__ = "0.1.0"
