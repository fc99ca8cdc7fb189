import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rstitch.core import GenerationTrace, RouterChoice, RouterStep, StitchConfig, Termination, Variant
from rstitch.errors import DegenerateGroup
from rstitch.latency import fixture_model
from rstitch.policy import N_FEATURES, RouterPolicy, router_features, router_probability
from rstitch.router import (
    DapoConfig,
    RolloutGroup,
    RoutingTask,
    clip_ratio,
    collect_group,
    compute_reward,
    dapo_objective,
    dapo_objective_and_grad,
    evaluate_policy,
    group_advantages,
    importance_ratio,
    target_oracle,
    train_router,
    write_training_log,
)
from rstitch.toy import router_suite

SWITCH, STAY = RouterChoice.SWITCH_LLM, RouterChoice.STAY_SLM


def logit(p):
    return math.log(p / (1 - p))


def bias_policy(b):
    w = np.zeros(N_FEATURES)
    w[-1] = b
    return RouterPolicy(w)


def unit(i):
    x = np.zeros(N_FEATURES)
    x[i] = 1.0
    return x


# -- reward -----------------------------------------------------------------

def test_reward_examples():
    assert compute_reward(True, 1e5, 5e-6) == 0.5
    assert compute_reward(False, 123.0, 7.0) == 0
    assert compute_reward(True, 0.0, 5e-6) == 1.0
    with pytest.raises(ValueError):
        compute_reward(True, -1.0, 1.0)


@given(st.floats(0, 1e7), st.floats(0, 1e-3))
def test_reward_sign(lat, lam):
    assert compute_reward(False, lat, lam) == 0.0
    if lam * lat <= 1:
        assert compute_reward(True, lat, lam) >= 0.0


# -- policy -----------------------------------------------------------------

def test_router_probability_examples():
    x = router_features(0.5, False, 3, 10, 2, [0.1, 0.2], 5)
    assert router_probability(RouterPolicy.zeros(), x) == 0.5
    assert router_probability(bias_policy(20.0), x) == pytest.approx(1.0, abs=1e-8)
    w = np.array([10, 0, 0, 0, 0, 0, -5.0])
    assert router_probability(RouterPolicy(w), x) == 0.5


def test_features_shape_and_values():
    x = router_features(0.25, False, 4, 16, 3, [0.0, 0.5], 15)
    assert x.tolist() == pytest.approx([0.25, 0.0, 0.25, 0.75, 0.25, math.log(16) / math.log(17), 1.0])
    assert router_features(0.9, True, 0, 8, 0, [], 0).tolist() == [0.9, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]


def test_policy_json_round_trip(tmp_path):
    p = RouterPolicy(np.arange(N_FEATURES) * 0.1 - 0.3)
    p.to_json(tmp_path / "p.json")
    assert np.array_equal(RouterPolicy.from_json(tmp_path / "p.json").weights, p.weights)


# -- advantages and ratios --------------------------------------------------

def test_advantage_examples():
    assert group_advantages([1, 0]).tolist() == [1.0, -1.0]
    with pytest.raises(DegenerateGroup):
        group_advantages([0.5, 0.5, 0.5])
    # population std of [2, 4, 6] is sqrt(8/3)
    assert group_advantages([2, 4, 6]) == pytest.approx([-2 / math.sqrt(8 / 3), 0, 2 / math.sqrt(8 / 3)])
    assert group_advantages([2, 4, 6])[2] == pytest.approx(1.2247, abs=1e-4)


@settings(max_examples=300)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=16))
def test_advantages_normalized(rewards):
    try:
        adv = group_advantages(rewards)
    except DegenerateGroup:
        assert np.std(rewards) < 1e-12
        return
    assert abs(adv.mean()) < 1e-9
    assert abs(adv.std() - 1) < 1e-9


def test_importance_ratio_examples():
    x = router_features(0.3, False, 1, 8, 1, [0.0], 3)
    new, old = bias_policy(0.0), bias_policy(logit(0.25))
    assert importance_ratio(new, new, x, SWITCH) == 1.0
    assert importance_ratio(new, old, x, SWITCH) == pytest.approx(2.0, rel=1e-12)
    assert importance_ratio(new, old, x, STAY) == pytest.approx(2 / 3, rel=1e-12)


# -- objective --------------------------------------------------------------

def _trace(decisions):
    return GenerationTrace((1,), (), (), Termination.BUDGET, decisions=tuple(decisions))


def _group(rewards, decisions_per_traj):
    return RolloutGroup((1,), [_trace(d) for d in decisions_per_traj], list(rewards))


def test_objective_identical_policies_equal_lengths_is_zero():
    pol = bias_policy(0.3)
    dec = [RouterStep(0, tuple(unit(0)), SWITCH, 0.0), RouterStep(1, tuple(unit(2)), STAY, 0.0)]
    g = _group([1.0, 0.2, 0.5], [dec, dec, dec])
    assert abs(dapo_objective([g], pol, pol, 0.2)) < 1e-12


def test_objective_clipping_closed_form():
    eps = 0.2
    old = RouterPolicy.zeros()
    w = np.zeros(N_FEATURES)
    w[0] = logit(0.5 * (1 + 2 * eps))  # decision A: switch, ratio 1 + 2 eps
    w[1] = logit(0.5 * (1 + 2 * eps))  # decision B: stay, ratio 1 - 2 eps
    new = RouterPolicy(w)
    a = RouterStep(0, tuple(unit(0)), SWITCH, 0.0)
    b = RouterStep(0, tuple(unit(1)), STAY, 0.0)
    assert importance_ratio(new, old, unit(0), SWITCH) == pytest.approx(1 + 2 * eps)
    assert importance_ratio(new, old, unit(1), STAY) == pytest.approx(1 - 2 * eps)
    g = _group([1.0, 0.0], [[a], [b]])  # advantages +1, -1
    # (min(1.4, 1.2) + min(-0.6, -0.8)) / 2
    assert dapo_objective([g], new, old, eps) == pytest.approx(((1 + eps) + (-1 + eps)) / 2)
    # ratio 1 + 2 eps on the negative-advantage trajectory is not clipped
    g2 = _group([1.0, 0.0], [[a], [a]])
    assert dapo_objective([g2], new, old, eps) == pytest.approx(((1 + eps) - (1 + 2 * eps)) / 2)


def test_objective_epsilon_zero():
    old = RouterPolicy.zeros()
    new = bias_policy(0.4)
    decs = [[RouterStep(0, tuple(unit(6)), SWITCH, 0.0)], [RouterStep(0, tuple(unit(6)), STAY, 0.0)]]
    g = _group([0.0, 1.0], decs)
    adv = group_advantages([0.0, 1.0])
    r = [importance_ratio(new, old, unit(6), SWITCH), importance_ratio(new, old, unit(6), STAY)]
    want = sum(min(ri * ai, ai) for ri, ai in zip(r, adv)) / 2
    assert dapo_objective([g], new, old, 0.0) == pytest.approx(want)


def test_degenerate_and_empty_groups_are_skipped():
    pol = bias_policy(0.1)
    dec = [RouterStep(0, tuple(unit(6)), SWITCH, 0.0)]
    flat = _group([1.0, 1.0], [dec, dec])
    no_decisions = _group([1.0, 0.0], [[], []])
    value, grad = dapo_objective_and_grad([flat, no_decisions], pol, RouterPolicy.zeros(), 0.2)
    assert value == 0.0 and not grad.any()


def random_instance(rng, eps, margin=1e-3):
    while True:
        old = RouterPolicy(rng.normal(0, 0.5, N_FEATURES))
        new = RouterPolicy(old.weights + rng.normal(0, 0.3, N_FEATURES))
        groups, ratios = [], []
        for _ in range(int(rng.integers(1, 4))):
            G = int(rng.integers(2, 6))
            trajs = []
            for _ in range(G):
                decs = []
                for t in range(int(rng.integers(1, 5))):
                    x = rng.uniform(0, 1, N_FEATURES)
                    x[-1] = 1.0
                    act = SWITCH if rng.random() < 0.5 else STAY
                    decs.append(RouterStep(t, tuple(x), act, old.action_logprob(x, act)))
                    ratios.append(importance_ratio(new, old, x, act))
                trajs.append(decs)
            groups.append(_group(rng.normal(size=G), trajs))
        r = np.array(ratios)
        if np.all(np.abs(r - (1 - eps)) > margin) and np.all(np.abs(r - (1 + eps)) > margin):
            return groups, new, old


def finite_difference(groups, pol, old, eps, h=1e-5):
    g = np.zeros(N_FEATURES)
    for i in range(N_FEATURES):
        up, dn = pol.weights.copy(), pol.weights.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (dapo_objective(groups, RouterPolicy(up), old, eps)
                - dapo_objective(groups, RouterPolicy(dn), old, eps)) / (2 * h)
    return g


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    for _ in range(20):
        groups, new, old = random_instance(rng, 0.2)
        _, grad = dapo_objective_and_grad(groups, new, old, 0.2)
        fd = finite_difference(groups, new, old, 0.2)
        assert np.linalg.norm(fd - grad) <= 1e-4 * max(np.linalg.norm(grad), 1e-8)


@settings(max_examples=200)
@given(st.floats(0.01, 5), st.floats(-3, 3), st.floats(0.01, 0.9))
def test_clip_term_matches_direct_evaluation(r, adv, eps):
    direct = min(r * adv, min(max(r, 1 - eps), 1 + eps) * adv)
    assert float(np.minimum(r * adv, clip_ratio(r, eps) * adv)) == pytest.approx(direct)
    # the unclipped branch wins exactly when clipping would not help the objective
    if adv * (r - float(clip_ratio(r, eps))) <= 0:
        assert direct == pytest.approx(r * adv)


# -- rollouts and training ----------------------------------------------------

def _setup(kind):
    suite = router_suite(kind)
    tasks = [RoutingTask(p, target_oracle(t)) for p, t in zip(suite.prompts, suite.targets)]
    scfg = StitchConfig(0.001, 32, 0, Variant.ROUTED)
    return suite, tasks, scfg


def test_rollout_groups_are_reproducible():
    suite, tasks, scfg = _setup("slm_correct")
    cfg = DapoConfig(batch_prompts=2, iterations=1)
    lat = fixture_model()
    ss = lambda: np.random.SeedSequence(42)
    a = collect_group(suite.slm, suite.llm, tasks[0], RouterPolicy.zeros(), scfg, lat, cfg, ss())
    b = collect_group(suite.slm, suite.llm, tasks[0], RouterPolicy.zeros(), scfg, lat, cfg, ss())
    assert a.rewards == b.rewards
    assert [t.steps for t in a.trajectories] == [t.steps for t in b.trajectories]
    assert len(a.trajectories) == 8 and all(t.decisions for t in a.trajectories)


def test_training_reduces_switching_when_slm_suffices(tmp_path):
    suite, tasks, scfg = _setup("slm_correct")
    lat = fixture_model()
    cfg = DapoConfig(batch_prompts=4, iterations=40, seed=3)
    pol, hist = train_router(suite.slm, suite.llm, tasks, lat, cfg, scfg)
    assert hist[-1].p_switch_mean < hist[0].p_switch_mean == 0.5
    assert all(h.accuracy == 1.0 for h in hist)
    write_training_log(hist, tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "iter,mean_reward,mean_latency_ms,accuracy,p_switch_mean" and len(lines) == 41


def test_lambda_zero_reward_is_accuracy_only():
    suite, tasks, scfg = _setup("llm_needed")
    lat = fixture_model()
    cfg = DapoConfig(batch_prompts=4, iterations=60, lam=0.0, seed=5)
    pol, hist = train_router(suite.slm, suite.llm, tasks, lat, cfg, scfg)
    assert all(h.mean_reward == pytest.approx(h.accuracy) for h in hist)
    never = bias_policy(-50.0)
    acc_never, _ = evaluate_policy(suite.slm, suite.llm, tasks, never, scfg, lat, stochastic=False)
    acc_trained, _ = evaluate_policy(suite.slm, suite.llm, tasks, pol, scfg, lat, stochastic=False)
    assert acc_trained >= acc_never


def test_training_requires_routed_variant():
    suite, tasks, _ = _setup("slm_correct")
    with pytest.raises(ValueError):
        train_router(suite.slm, suite.llm, tasks, fixture_model(), DapoConfig(iterations=1),
                     StitchConfig(0.001, 8, 0))


def test_config_validation():
    with pytest.raises(ValueError):
        DapoConfig(epsilon=0.0)
    with pytest.raises(ValueError):
        DapoConfig(lam=-1.0)
    with pytest.raises(ValueError):
        DapoConfig(group_size=1)
