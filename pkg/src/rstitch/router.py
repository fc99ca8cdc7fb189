"""Latency-aware reward, group-normalized advantages and the clipped
surrogate objective used to train the router."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .backends import GREEDY, ModelBackend, Sample, SelectionMode
from .core import GenerationTrace, RouterChoice, StitchConfig, Variant
from .errors import DegenerateGroup, NoDecisionPoints
from .latency import LatencyModel, trajectory_latency
from .policy import RouterPolicy, _log_sigmoid
from .stitch import stitch_decode

log = logging.getLogger(__name__)

DEGENERATE_STD = 1e-12

AnswerOracle = Callable[[Sequence[int]], bool]


def compute_reward(correct: bool, latency_ms: float, lam: float) -> float:
    """Accuracy reward plus an efficiency penalty that applies only to correct outputs."""
    if latency_ms < 0:
        raise ValueError("latency must be non-negative")
    r_acc = 1.0 if correct else 0.0
    r_eff = -lam * r_acc * latency_ms
    return r_acc + r_eff


def group_advantages(rewards: Sequence[float]) -> np.ndarray:
    """(R_i - mean) / std with the population std."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.shape[0] < 2:
        raise ValueError("a group needs at least two rewards")
    std = r.std()
    if std < DEGENERATE_STD:
        raise DegenerateGroup(f"reward std {std!r} is zero")
    return (r - r.mean()) / std


def clip_ratio(x, epsilon: float):
    return np.minimum(np.maximum(x, 1.0 - epsilon), 1.0 + epsilon)


def importance_ratio(policy: RouterPolicy, old_policy: RouterPolicy, features,
                     action: RouterChoice) -> float:
    return float(np.exp(policy.action_logprob(features, action) - old_policy.action_logprob(features, action)))


@dataclass
class RolloutGroup:
    prompt: tuple[int, ...]
    trajectories: list[GenerationTrace]
    rewards: list[float]
    latencies: list[float] = field(default_factory=list)
    correct: list[bool] = field(default_factory=list)

    def __post_init__(self):
        if len(self.trajectories) < 2:
            raise ValueError("a rollout group needs G >= 2 trajectories")
        if len(self.rewards) != len(self.trajectories):
            raise ValueError("one reward per trajectory")


@dataclass(frozen=True)
class DapoConfig:
    group_size: int = 8
    epsilon: float = 0.2
    lam: float = 5e-6
    learning_rate: float = 0.05
    batch_prompts: int = 32
    iterations: int = 200
    epochs: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.group_size < 2:
            raise ValueError("group size must be >= 2")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")


def _flatten(groups: Sequence[RolloutGroup]):
    """Stack every decision point into arrays; per-decision weights fold in the
    1/sum|o_i| normalizer and the average over usable groups."""
    feats, acts, advs, weights = [], [], [], []
    used = 0
    for gi, g in enumerate(groups):
        try:
            adv = group_advantages(g.rewards)
        except DegenerateGroup:
            log.debug("skipping degenerate group %d", gi)
            continue
        n = sum(len(tr.decisions) for tr in g.trajectories)
        if n == 0:
            log.debug("skipping group %d: %s", gi, NoDecisionPoints.__name__)
            continue
        used += 1
        for a_i, tr in zip(adv, g.trajectories):
            for d in tr.decisions:
                feats.append(d.features)
                acts.append(1.0 if d.action is RouterChoice.SWITCH_LLM else 0.0)
                advs.append(a_i)
                weights.append(1.0 / n)
    if not used:
        return None
    return (np.asarray(feats, dtype=np.float64), np.asarray(acts), np.asarray(advs),
            np.asarray(weights) / used)


def _logprobs(w: np.ndarray, F: np.ndarray, acts: np.ndarray) -> np.ndarray:
    z = F @ w
    signed = np.where(acts > 0, z, -z)
    return np.array([_log_sigmoid(v) for v in signed])


def dapo_objective(groups: Sequence[RolloutGroup], policy: RouterPolicy, old_policy: RouterPolicy,
                   epsilon: float) -> float:
    value, _ = dapo_objective_and_grad(groups, policy, old_policy, epsilon)
    return value


def dapo_objective_and_grad(groups: Sequence[RolloutGroup], policy: RouterPolicy,
                            old_policy: RouterPolicy, epsilon: float) -> tuple[float, np.ndarray]:
    flat = _flatten(groups)
    if flat is None:
        return 0.0, np.zeros_like(policy.weights)
    F, acts, adv, weights = flat
    ratio = np.exp(_logprobs(policy.weights, F, acts) - _logprobs(old_policy.weights, F, acts))
    unclipped = ratio * adv
    clipped = clip_ratio(ratio, epsilon) * adv
    value = float(np.sum(weights * np.minimum(unclipped, clipped)))
    # the min selects the unclipped branch exactly where it carries gradient
    active = unclipped <= clipped
    p_switch = 0.5 * (1.0 + np.tanh(0.5 * (F @ policy.weights)))
    dlogp = (acts - p_switch)[:, None] * F
    grad = ((weights * active * adv * ratio)[:, None] * dlogp).sum(axis=0)
    return value, grad


# -- rollouts and training --------------------------------------------------

@dataclass(frozen=True)
class RoutingTask:
    prompt: tuple[int, ...]
    oracle: AnswerOracle


def target_oracle(target: Sequence[int]) -> AnswerOracle:
    target = tuple(target)
    return lambda output: tuple(output) == target


@dataclass(frozen=True)
class IterationLog:
    iteration: int
    mean_reward: float
    mean_latency_ms: float
    accuracy: float
    p_switch_mean: float


def _rollout(slm, llm, task: RoutingTask, policy, stitch_config, latency, lam, seed_seq,
             mode: SelectionMode, stochastic: bool = True):
    router_ss, token_ss = seed_seq.spawn(2)
    if isinstance(mode, Sample):
        mode = Sample(int(token_ss.generate_state(1)[0]))
    router_rng = np.random.default_rng(router_ss) if stochastic else None
    trace = stitch_decode(slm, llm, task.prompt, stitch_config, router=policy, mode=mode, router_rng=router_rng)
    correct = bool(task.oracle(trace.output))
    lat = trajectory_latency(trace, latency)
    return trace, correct, lat, compute_reward(correct, lat, lam)


def collect_group(slm: ModelBackend, llm: ModelBackend, task: RoutingTask, policy: RouterPolicy,
                  stitch_config: StitchConfig, latency: LatencyModel, config: DapoConfig,
                  seed_seq: np.random.SeedSequence, mode: SelectionMode = GREEDY) -> RolloutGroup:
    traces, rewards, lats, correct = [], [], [], []
    for ss in seed_seq.spawn(config.group_size):
        tr, ok, lat, rew = _rollout(slm, llm, task, policy, stitch_config, latency, config.lam, ss, mode)
        traces.append(tr)
        rewards.append(rew)
        lats.append(lat)
        correct.append(ok)
    return RolloutGroup(task.prompt, traces, rewards, lats, correct)


def train_router(slm: ModelBackend, llm: ModelBackend, tasks: Sequence[RoutingTask], latency: LatencyModel,
                 config: DapoConfig, stitch_config: StitchConfig, init: Optional[RouterPolicy] = None,
                 mode: SelectionMode = GREEDY) -> tuple[RouterPolicy, list[IterationLog]]:
    if stitch_config.variant is not Variant.ROUTED:
        raise ValueError("router training needs the routed variant")
    if not tasks:
        raise ValueError("no training prompts")
    latency.require_both()
    policy = init or RouterPolicy.zeros()
    root = np.random.SeedSequence(config.seed)
    history = []
    for it, it_ss in enumerate(root.spawn(config.iterations)):
        old = policy
        batch = [tasks[(it * config.batch_prompts + j) % len(tasks)] for j in range(config.batch_prompts)]
        groups = [collect_group(slm, llm, task, old, stitch_config, latency, config, ss, mode)
                  for task, ss in zip(batch, it_ss.spawn(len(batch)))]
        for _ in range(config.epochs):
            _, grad = dapo_objective_and_grad(groups, policy, old, config.epsilon)
            policy = RouterPolicy(policy.weights + config.learning_rate * grad)
        history.append(_summarize(it, groups, old))
    return policy, history


def _summarize(it: int, groups: Sequence[RolloutGroup], policy: RouterPolicy) -> IterationLog:
    rewards = [r for g in groups for r in g.rewards]
    lats = [x for g in groups for x in g.latencies]
    acc = [c for g in groups for c in g.correct]
    ps = [policy.p_switch(d.features) for g in groups for tr in g.trajectories for d in tr.decisions]
    return IterationLog(it, float(np.mean(rewards)), float(np.mean(lats)), float(np.mean(acc)),
                        float(np.mean(ps)) if ps else 0.0)


def evaluate_policy(slm: ModelBackend, llm: ModelBackend, tasks: Sequence[RoutingTask], policy: RouterPolicy,
                    stitch_config: StitchConfig, latency: LatencyModel, rollouts: int = 16, seed: int = 0,
                    stochastic: bool = True, lam: float = 0.0,
                    mode: SelectionMode = GREEDY) -> tuple[float, float]:
    """Accuracy and mean estimated latency of a policy over ``rollouts`` runs per task."""
    acc, lats = [], []
    root = np.random.SeedSequence(seed)
    for task, task_ss in zip(tasks, root.spawn(len(tasks))):
        for ss in task_ss.spawn(rollouts if stochastic else 1):
            _, ok, lat, _ = _rollout(slm, llm, task, policy, stitch_config, latency, lam, ss, mode, stochastic)
            acc.append(ok)
            lats.append(lat)
    return float(np.mean(acc)), float(np.mean(lats))


def write_training_log(history: Sequence[IterationLog], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "mean_reward", "mean_latency_ms", "accuracy", "p_switch_mean"])
        for h in history:
            w.writerow([h.iteration, f"{h.mean_reward:.9g}", f"{h.mean_latency_ms:.9g}",
                        f"{h.accuracy:.9g}", f"{h.p_switch_mean:.9g}"])
