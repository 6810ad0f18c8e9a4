import dataclasses

import numpy as np
import pytest

from fairdyn.dynamics import EnsembleConfig, UntrainedModel, EnsembleModel
from fairdyn.envs import ALLOCATION_MENU, GroupEnvState, preset
from fairdyn.planner import (
    ActionDistribution,
    PlanConfig,
    evaluate_candidates,
    learn,
    parse_mode,
    plan,
    plan_details,
    project_to_menu,
    run_episode,
    update_distribution,
)

MENU = np.asarray(ALLOCATION_MENU, dtype=float)


class TabularModel:
    """Stand-in ensemble with closed-form dynamics.

    State is a scalar per group that decays by ``0.1 * a``; the reward of
    group z is ``bonus[z] + a - cost * a**2 + offset``. Predictions have
    standard deviation ``noise`` (zero by default, i.e. deterministic).
    """

    trained = True
    simplex_state = False
    state_dim = 1

    def __init__(self, bonus=(0.0, 0.0), cost=0.1, offset=0.0, ensemble_size=5, noise=0.0):
        self.bonus = np.asarray(bonus, dtype=np.float32)
        self.cost = cost
        self.offset = offset
        self.ensemble_size = ensemble_size
        self.noise = noise

    def pair_predictor(self):
        return self

    def __call__(self, s, a):
        a = a[..., 0]
        r = self.bonus + a - self.cost * a ** 2 + self.offset
        std = np.full(s.shape[:-1] + (2,), self.noise, dtype=np.float32)
        return s - 0.1 * a[..., None], r.astype(np.float32), std


def state(s0=3.0, s1=3.0):
    return GroupEnvState(np.array([[s0], [s1]]))


def quick(**kw):
    return PlanConfig(**{"population": 60, "elites": 8, "iterations": 4, "horizon": 4, **kw})


def test_parse_mode_aliases():
    assert parse_mode("pets") == "PETS"
    assert parse_mode("fair-a") == "FairA"
    assert parse_mode("insightfair") == "InsightFair"
    with pytest.raises(ValueError):
        parse_mode("greedy")


def test_plan_config_validation():
    with pytest.raises(ValueError):
        PlanConfig(elites=300, population=200)
    with pytest.raises(ValueError):
        PlanConfig(horizon=0)
    with pytest.raises(ValueError):
        PlanConfig(mode="other")


def test_project_to_menu_nearest_with_low_ties():
    np.testing.assert_array_equal(project_to_menu([0.4, 2.5, 9.7, -3.0], MENU), [0, 2, 10, 0])


def test_update_distribution_example():
    dist = ActionDistribution.initial(1, 1, 0.0, 10.0)
    out = update_distribution(dist, np.array([[[2.0]], [[3.0]], [[4.0]]]))
    assert out.mean[0, 0] == pytest.approx(3.0)
    assert out.std[0, 0] == pytest.approx(np.sqrt(2 / 3))
    same = update_distribution(dist, np.array([[[5.0]], [[5.0]]]), std_floor=1e-3)
    assert same.std[0, 0] == 1e-3
    with pytest.raises(ValueError):
        update_distribution(dist, np.empty((0, 1, 1)))


def test_initial_distribution_spans_menu():
    dist = ActionDistribution.initial(10, 2, 0.0, 10.0)
    assert dist.mean.shape == (10, 2) and not dist.shared
    np.testing.assert_allclose(dist.mean, 5.0)
    np.testing.assert_allclose(dist.std, 2.5)


def test_pets_finds_reward_maximizing_action():
    # a - 0.1 a^2 peaks at a = 5
    action = plan(TabularModel(), state(), quick(mode="PETS"), False, np.random.default_rng(0), MENU)
    np.testing.assert_array_equal(action, [5, 5])


def test_actions_stay_in_menu_and_history_nondecreasing():
    model = TabularModel(bonus=(0.0, 1.0), cost=0.05)
    for mode in ("PETS", "FairA", "FairS", "InsightFair"):
        res = plan_details(model, state(3.0, 2.0), quick(mode=mode), False, np.random.default_rng(1), MENU)
        assert set(res.best.actions.ravel()) <= set(MENU)
        assert np.all(np.diff(res.best_history) >= 0)


def test_fair_a_zero_decision_gap():
    model = TabularModel(bonus=(0.0, 3.0), cost=0.2)
    rng = np.random.default_rng(2)
    for s1 in (1.0, 3.0, 8.0):
        res = plan_details(model, state(3.0, s1), quick(mode="FairA"), True, rng, MENU)
        assert res.shared
        assert res.action[0] == res.action[1]
        np.testing.assert_array_equal(res.best.actions[:, 0], res.best.actions[:, 1])


def test_insightfair_without_penalty_matches_pets():
    model = TabularModel(bonus=(0.0, 1.0), cost=0.07)
    pets = plan_details(model, state(4.0, 2.0), quick(mode="PETS"), True, np.random.default_rng(5), MENU)
    fair = plan_details(model, state(4.0, 2.0), quick(mode="InsightFair", penalty=0.0), True,
                        np.random.default_rng(5), MENU)
    np.testing.assert_array_equal(pets.action, fair.action)
    assert pets.best_history == fair.best_history


def test_insightfair_shares_actions_only_when_fair_and_close():
    model = TabularModel()
    cfg = quick(mode="InsightFair", disparity_threshold=0.05)
    rng = np.random.default_rng(0)
    assert plan_details(model, state(3.0, 3.01), cfg, False, rng, MENU).shared
    assert not plan_details(model, state(3.0, 3.01), cfg, True, rng, MENU).shared
    assert not plan_details(model, state(3.0, 4.0), cfg, False, rng, MENU).shared


def test_insightfair_penalty_shrinks_return_gap():
    # group 1 earns a fixed bonus, so closing the gap means favouring group 0
    model = TabularModel(bonus=(0.0, 2.0), cost=0.1)
    cfg = dict(horizon=1, population=200, elites=20, iterations=5)
    pets = plan_details(model, state(3.0, 5.0), PlanConfig(mode="PETS", **cfg), True,
                        np.random.default_rng(0), MENU)
    fair = plan_details(model, state(3.0, 5.0), PlanConfig(mode="InsightFair", penalty=2.0, **cfg), True,
                        np.random.default_rng(0), MENU)
    assert abs(fair.best.gap) < abs(pets.best.gap)


def test_objective_shift_leaves_plan_unchanged():
    base = plan(TabularModel(bonus=(0.0, 0.5)), state(), quick(), False, np.random.default_rng(9), MENU)
    moved = plan(TabularModel(bonus=(0.0, 0.5), offset=-7.0), state(), quick(), False,
                 np.random.default_rng(9), MENU)
    np.testing.assert_array_equal(base, moved)


def test_deterministic_model_particles_agree():
    model = TabularModel(bonus=(0.5, 0.0))
    cands = project_to_menu(np.random.default_rng(0).uniform(0, 10, (6, 4, 2)), MENU)
    one = evaluate_candidates(model, state(), cands, quick(particles=1), np.random.default_rng(0))
    many = evaluate_candidates(model, state(), cands, quick(particles=7), np.random.default_rng(1))
    for a, b in zip(one, many):
        np.testing.assert_allclose(a.returns, b.returns, rtol=1e-6)
    # hand computation for the first candidate
    a = cands[0]
    w = 0.99 ** np.arange(4)
    expect = [(w * (0.5 + a[:, 0] - 0.1 * a[:, 0] ** 2)).sum(), (w * (a[:, 1] - 0.1 * a[:, 1] ** 2)).sum()]
    np.testing.assert_allclose(one[0].returns, expect, rtol=1e-5)


def test_common_noise_ranks_identical_candidates_equally():
    model = TabularModel(noise=1.0)
    cands = np.repeat(project_to_menu(np.random.default_rng(0).uniform(0, 10, (1, 4, 2)), MENU), 5, axis=0)
    shared = evaluate_candidates(model, state(), cands, quick(), np.random.default_rng(0))
    assert len({tuple(e.returns) for e in shared}) == 1
    independent = evaluate_candidates(model, state(), cands, quick(common_noise=False), np.random.default_rng(0))
    assert len({tuple(e.returns) for e in independent}) == 5


def test_fair_s_penalizes_terminal_disparity():
    model = TabularModel(cost=0.0)
    cands = np.array([[[10.0, 10.0]] * 4, [[10.0, 0.0]] * 4])
    cfg = quick(mode="FairS", state_penalty=100.0)
    evals = evaluate_candidates(model, state(), cands, cfg, np.random.default_rng(0))
    assert evals[0].objective > evals[1].objective


def test_untrained_model_rejected():
    model = EnsembleModel(EnsembleConfig(ensemble_size=2), state_dim=1)
    with pytest.raises(UntrainedModel):
        plan(model, state(), quick(), False, np.random.default_rng(0), MENU)


def test_run_episode_deterministic():
    params = dataclasses.replace(preset("allocation", "unfair"), episode_len=6)
    model = TabularModel(bonus=(0.0, 0.5))
    a = run_episode(params, model, quick(mode="InsightFair"), False, 4)
    b = run_episode(params, model, quick(mode="InsightFair"), False, 4)
    np.testing.assert_array_equal(a.actions, b.actions)
    np.testing.assert_array_equal(a.rewards, b.rewards)
    assert a.states.shape == (7, 2, 1)
    assert len(list(a.rows())) == 6
    assert len(a.to_dataset()) == 12


def test_learn_smoke():
    params = dataclasses.replace(preset("allocation", "unfair"), episode_len=8)
    res = learn(params, quick(mode="InsightFair"), epochs=2, seed=0,
                model_config=EnsembleConfig(ensemble_size=2, hidden_layers=(8,), epochs=5),
                warmup_episodes=2, refit_epochs=2, n_boot=20)
    assert [e.epoch for e in res.epochs] == [0, 1]
    assert all(np.isfinite(e.total_return) for e in res.epochs)
    again = learn(params, quick(mode="InsightFair"), epochs=2, seed=0,
                  model_config=EnsembleConfig(ensemble_size=2, hidden_layers=(8,), epochs=5),
                  warmup_episodes=2, refit_epochs=2, n_boot=20)
    assert [e.row() for e in res.epochs] == [e.row() for e in again.epochs]
