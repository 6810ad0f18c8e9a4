import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairdyn.causal import (
    DegenerateSpec,
    DiscreteSCM,
    DiscretizationSpec,
    EmptyDataset,
    EmptyGroup,
    MissingStep,
    SupportTooLarge,
    TrajectoryDataset,
    TransitionRecord,
    check_dynamics_fairness,
    decompose_gap,
    estimate_effects,
    estimate_nde_next_state,
    estimate_nde_reward,
    estimate_nie_reward,
    estimate_te_reward,
    fit_tables,
    oracle_effects,
    random_scm,
    read_jsonl,
    write_effects_csv,
    write_jsonl,
)


def two_bin_data(t=0):
    """Two action bins; P(.|z0) = (0.75, 0.25), P(.|z1) = (0.5, 0.5) without smoothing.

    E[R|z0] = (0.2, 0.4) and E[R|z1] = (0.6, 0.5).
    """
    z = [0, 0, 0, 0, 1, 1]
    a = [0, 0, 0, 1, 0, 1]
    r = [0.2, 0.2, 0.2, 0.4, 0.6, 0.5]
    n = len(z)
    return TrajectoryDataset(z, np.zeros(n), a, r, np.zeros(n), np.full(n, t))


def two_bin_spec(alpha=0.0):
    return DiscretizationSpec(
        state_bins=(1,), state_bounds=((-1.0, 1.0),),
        action_values=((0.0, 1.0),), laplace_alpha=alpha,
    )


def check_consistency(tables):
    te, nde, nie = tables.point_values()[:3]
    assert abs(te - (nde - nie)) < 1e-9


# -- tables ------------------------------------------------------------------


def test_single_record_table():
    data = TrajectoryDataset([0, 1], [[0.0], [0.0]], [[0.0], [0.0]], [1.0, 0.0],
                             [[0.0], [0.0]], [0, 0])
    spec = DiscretizationSpec(state_bins=(1,), state_bounds=((-1, 1),),
                              action_bins=(1,), action_bounds=((-1, 1),), laplace_alpha=0.0)
    tables = fit_tables(data, spec)
    assert tables.prob(0)[0] == 1.0
    assert tables.mean_reward(0)[0] == 1.0
    check_consistency(tables)


def test_sample_mean_in_bin():
    data = TrajectoryDataset([0, 0, 1], np.zeros(3), np.zeros(3), [0.0, 1.0, 0.0], np.zeros(3), [0, 0, 0])
    tables = fit_tables(data, two_bin_spec())
    assert tables.mean_reward(0)[0] == 0.5


def test_laplace_smoothing_three_bins():
    a = [0, 0, 1, 2, 0]
    z = [0, 0, 0, 0, 1]
    data = TrajectoryDataset(z, np.zeros(5), a, np.zeros(5), np.zeros(5), np.zeros(5))
    spec = DiscretizationSpec(state_bins=(1,), state_bounds=((-1, 1),),
                              action_values=((0.0, 1.0, 2.0),), laplace_alpha=1.0)
    tables = fit_tables(data, spec)
    np.testing.assert_allclose(tables.prob(0), [3 / 7, 2 / 7, 2 / 7], atol=1e-15)
    check_consistency(tables)


def test_probabilities_include_unoccupied_cells():
    data = two_bin_data()
    spec = DiscretizationSpec(state_bins=(4,), state_bounds=((-1, 1),),
                              action_values=((0.0, 1.0),), laplace_alpha=1.0)
    tables = fit_tables(data, spec)
    for g in (0, 1):
        assert abs(tables.prob(g).sum() + tables.unoccupied_mass(g) - 1.0) < 1e-12


def test_empty_group_and_dataset_errors():
    with pytest.raises(EmptyDataset):
        TrajectoryDataset([], [], [], [], [], [])
    data = TrajectoryDataset([0, 0], np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2), [0, 0])
    with pytest.raises(EmptyGroup):
        fit_tables(data, two_bin_spec())


def test_degenerate_spec():
    with pytest.raises(DegenerateSpec):
        DiscretizationSpec(state_bins=(3,), state_bounds=((1.0, 1.0),))
    with pytest.raises(DegenerateSpec):
        DiscretizationSpec(state_bins=(0,), state_bounds=((0.0, 1.0),))


def test_out_of_bounds_values_clamp():
    spec = DiscretizationSpec(state_bins=(4,), state_bounds=((0.0, 1.0),),
                              action_bins=(1,), action_bounds=((0.0, 1.0),))
    idx = spec.cell_index([[-5.0], [0.1], [0.9], [7.0]], [[0.5]] * 4)
    assert list(idx) == [0, 0, 3, 3]


def test_transition_record_validation():
    with pytest.raises(ValueError):
        TransitionRecord(2, (0.0,), (0.0,), 0.0, (0.0,), 0)
    with pytest.raises(ValueError):
        TransitionRecord(0, (0.0,), (0.0,), float("nan"), (0.0,), 0)
    with pytest.raises(ValueError):
        TransitionRecord(0, (0.0, 1.0), (0.0,), 0.0, (0.0,), 0)


# -- estimators --------------------------------------------------------------


def test_worked_two_bin_example():
    tables = fit_tables(two_bin_data(), two_bin_spec())
    eff = estimate_effects(tables, n_boot=0)
    assert eff["TE_R"].value == pytest.approx(0.30, abs=1e-12)
    assert eff["NDE_R"].value == pytest.approx(0.325, abs=1e-12)
    assert eff["NIE_R"].value == pytest.approx(0.025, abs=1e-12)
    assert estimate_te_reward(tables, n_boot=0).value == pytest.approx(0.30)
    assert estimate_nde_reward(tables, n_boot=0).value == pytest.approx(0.325)
    assert estimate_nie_reward(tables, n_boot=0).value == pytest.approx(0.025)
    check_consistency(tables)


def test_identical_groups_give_zero():
    n = 40
    rng = np.random.default_rng(0)
    a = rng.integers(0, 2, n)
    r = rng.normal(size=n)
    z = np.r_[np.zeros(n), np.ones(n)]
    data = TrajectoryDataset(z, np.zeros(2 * n), np.r_[a, a], np.r_[r, r], np.zeros(2 * n), np.zeros(2 * n))
    eff = estimate_effects(fit_tables(data, two_bin_spec(1.0)), n_boot=0)
    for key in ("TE_R", "NDE_R", "NIE_R"):
        assert abs(eff[key].value) < 1e-12


def test_constant_shift_and_constant_reward():
    n = 30
    rng = np.random.default_rng(1)
    a0, a1 = rng.integers(0, 2, n), rng.integers(0, 2, n)
    z = np.r_[np.zeros(n), np.ones(n)]
    # reward depends only on the bin, plus 0.5 for z1
    r = np.r_[0.1 * a0, 0.1 * a1 + 0.5]
    data = TrajectoryDataset(z, np.zeros(2 * n), np.r_[a0, a1], r, np.zeros(2 * n), np.zeros(2 * n))
    eff = estimate_effects(fit_tables(data, two_bin_spec(1.0)), n_boot=0)
    assert eff["NDE_R"].value == pytest.approx(0.5, abs=1e-12)
    # constant reward for z1 kills the indirect effect
    r = np.r_[0.1 * a0, np.full(n, 0.7)]
    data = TrajectoryDataset(z, np.zeros(2 * n), np.r_[a0, a1], r, np.zeros(2 * n), np.zeros(2 * n))
    assert abs(estimate_effects(fit_tables(data, two_bin_spec(1.0)), n_boot=0)["NIE_R"].value) < 1e-12


def test_next_state_single_bin():
    data = TrajectoryDataset([0, 1], [[1.0], [1.0]], [[0.0], [0.0]], [0.0, 0.0], [[1.0], [1.2]], [0, 0])
    spec = DiscretizationSpec(state_bins=(1,), state_bounds=((0.0, 2.0),),
                              action_bins=(1,), action_bounds=((-1, 1),), laplace_alpha=0.0)
    est = estimate_nde_next_state(fit_tables(data, spec), n_boot=0)
    assert est.value.shape == (1,)
    assert est.value[0] == pytest.approx(0.2)


def test_next_state_identical_tables_zero_vector():
    rng = np.random.default_rng(2)
    s = rng.normal(size=(20, 3))
    s2 = s + rng.normal(size=(20, 3))
    a = rng.integers(0, 2, 20)
    data = TrajectoryDataset(np.r_[np.zeros(20), np.ones(20)], np.r_[s, s], np.r_[a, a],
                             np.zeros(40), np.r_[s2, s2], np.zeros(40))
    spec = DiscretizationSpec.from_data(data, state_bins=3, action_values=(0.0, 1.0))
    est = estimate_nde_next_state(fit_tables(data, spec), n_boot=0)
    np.testing.assert_allclose(est.value, 0.0, atol=1e-12)


def test_next_state_effect_ignores_within_bin_state_offset():
    # groups sit at different points of one bin but move identically
    s = np.r_[np.full(50, 0.1), np.full(50, 0.9)]
    data = TrajectoryDataset(np.r_[np.zeros(50), np.ones(50)], s, np.zeros(100), np.zeros(100),
                             s + 0.05, np.zeros(100))
    spec = DiscretizationSpec(state_bins=(1,), state_bounds=((0.0, 1.0),),
                              action_bins=(1,), action_bounds=((-1, 1),))
    tables = fit_tables(data, spec)
    assert tables.mean_next_state(1)[0, 0] - tables.mean_next_state(0)[0, 0] == pytest.approx(0.8)
    assert abs(estimate_nde_next_state(tables, n_boot=0).value[0]) < 1e-12


def test_bootstrap_stderr_nonnegative_and_seeded():
    rng = np.random.default_rng(3)
    n = 400
    data = TrajectoryDataset(rng.integers(0, 2, n), rng.normal(size=n), rng.integers(0, 3, n),
                             rng.normal(size=n), rng.normal(size=n), np.zeros(n))
    spec = DiscretizationSpec.from_data(data, state_bins=4, action_values=(0.0, 1.0, 2.0))
    tables = fit_tables(data, spec)
    a = estimate_effects(tables, n_boot=50, seed=7)
    b = estimate_effects(fit_tables(data, spec), n_boot=50, seed=7)
    for key in a:
        assert np.all(np.asarray(a[key].stderr) >= 0)
        np.testing.assert_array_equal(a[key].stderr, b[key].stderr)
    check_consistency(tables)


def test_swapping_groups_negates_total_effect():
    rng = np.random.default_rng(4)
    n = 300
    data = TrajectoryDataset(rng.integers(0, 2, n), rng.normal(size=n), rng.integers(0, 2, n),
                             rng.normal(size=n), rng.normal(size=n), np.zeros(n))
    spec = DiscretizationSpec.from_data(data, state_bins=3, action_values=(0.0, 1.0))
    fwd = estimate_effects(fit_tables(data, spec), n_boot=0)
    rev = estimate_effects(fit_tables(data.swap_groups(), spec), n_boot=0)
    assert rev["TE_R"].value == pytest.approx(-fwd["TE_R"].value, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6), st.floats(0.0, 3.0))
def test_plug_in_consistency_property(seed, bins, alpha):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(10, 200))
    data = TrajectoryDataset(
        np.r_[0, 1, rng.integers(0, 2, n)], rng.normal(size=n + 2), rng.integers(0, 3, n + 2),
        rng.normal(size=n + 2), rng.normal(size=n + 2), np.zeros(n + 2),
    )
    spec = DiscretizationSpec.from_data(data, state_bins=bins, action_values=(0.0, 1.0, 2.0),
                                        laplace_alpha=alpha)
    try:
        tables = fit_tables(data, spec)
        check_consistency(tables)
    except Exception as exc:          # only lack of overlap is acceptable
        assert type(exc).__name__ == "NoOverlap"


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_record_order_does_not_matter(seed):
    rng = np.random.default_rng(seed)
    n = 100
    data = TrajectoryDataset(np.r_[0, 1, rng.integers(0, 2, n - 2)], rng.normal(size=n),
                             rng.integers(0, 2, n), rng.normal(size=n), rng.normal(size=n), np.zeros(n))
    spec = DiscretizationSpec.from_data(data, state_bins=2, action_values=(0.0, 1.0))
    perm = rng.permutation(n)
    shuffled = data.subset(perm)
    a = fit_tables(data, spec).point_values()
    b = fit_tables(shuffled, spec).point_values()
    np.testing.assert_allclose(a, b, atol=1e-12)


# -- decomposition -----------------------------------------------------------


def test_decomposition_single_step():
    report = decompose_gap(two_bin_data(), two_bin_spec(), horizon=1, n_boot=0)
    assert report.te_g.value == pytest.approx(0.30, abs=1e-12)
    assert report.residual < 1e-9
    assert report.per_step[0].nde_r.value == pytest.approx(0.325)


def test_decomposition_zero_discount_and_constant_rewards():
    parts = [two_bin_data(0), two_bin_data(1)]
    data = TrajectoryDataset.concatenate(parts)
    data = TrajectoryDataset(data.z, data.s, data.a, data.r, data.s2, data.t, discount=0.0)
    report = decompose_gap(data, two_bin_spec(), n_boot=0)
    assert report.te_g.value == report.per_step[0].te_r.value
    const = TrajectoryDataset(data.z, data.s, data.a, np.ones(len(data)), data.s2, data.t)
    report = decompose_gap(const, two_bin_spec(), n_boot=0)
    for step in report.per_step:
        for est in (step.te_r, step.nde_r, step.nie_r):
            assert abs(est.value) < 1e-12


def test_decomposition_missing_step_and_metadata(tmp_path):
    data = TrajectoryDataset.concatenate([two_bin_data(0), two_bin_data(2)])
    with pytest.raises(MissingStep):
        decompose_gap(data, two_bin_spec(), n_boot=0)
    report = decompose_gap(two_bin_data(0), two_bin_spec(), n_boot=10)
    g = two_bin_data().discount
    assert report.metadata["truncation_bound"] == pytest.approx(g * 0.6 / (1 - g))
    path = tmp_path / "effects.csv"
    write_effects_csv(report.rows(), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "kind,step,value,stderr,n"
    assert len(lines) == 1 + 3 + 1


# -- fairness verdict --------------------------------------------------------


def test_fairness_verdicts():
    tables = fit_tables(two_bin_data(), two_bin_spec())
    verdict = check_dynamics_fairness(tables, tau=0.05, n_boot=0)
    assert verdict.violated and verdict.nde_r.value == pytest.approx(0.325)
    n = 20
    z = np.r_[np.zeros(n), np.ones(n)]
    zero = TrajectoryDataset(z, np.zeros(2 * n), np.zeros(2 * n), np.zeros(2 * n), np.zeros(2 * n), np.zeros(2 * n))
    verdict = check_dynamics_fairness(fit_tables(zero, two_bin_spec()), tau=0.05, n_boot=0)
    assert not verdict.violated
    with pytest.raises(ValueError):
        check_dynamics_fairness(tables, tau=-1.0)


# -- oracle ------------------------------------------------------------------


def test_oracle_exclusion_restrictions():
    rng = np.random.default_rng(5)
    scm = random_scm(rng)
    # reward ignores z
    f_r = scm.f_r.copy()
    f_r[1] = f_r[0]
    te, nde, nie = oracle_effects(DiscreteSCM(scm.p_z1, scm.p_us, scm.p_ua, scm.p_ur, scm.f_s, scm.f_a, f_r))
    assert abs(nde) < 1e-12
    # mediators ignore z
    f_s, f_a = scm.f_s.copy(), scm.f_a.copy()
    f_s[1], f_a[1] = f_s[0], f_a[0]
    te, nde, nie = oracle_effects(DiscreteSCM(scm.p_z1, scm.p_us, scm.p_ua, scm.p_ur, f_s, f_a, scm.f_r))
    assert abs(nie) < 1e-12
    te, nde, nie = oracle_effects(scm)
    assert abs(te - (nde - nie)) < 1e-12


def test_oracle_support_cap():
    scm = random_scm(np.random.default_rng(6))
    with pytest.raises(SupportTooLarge):
        oracle_effects(scm, max_support=2)


def test_plug_in_matches_oracle_on_one_scm():
    rng = np.random.default_rng(7)
    scm = random_scm(rng)
    data = scm.sample(100_000, rng)
    eff = estimate_effects(fit_tables(data, scm.spec()), n_boot=100, seed=1)
    for key, truth in zip(("TE_R", "NDE_R", "NIE_R"), oracle_effects(scm)):
        assert abs(eff[key].value - truth) <= 4 * eff[key].stderr + 1e-3


# -- io ----------------------------------------------------------------------


def test_jsonl_round_trip(tmp_path):
    data = two_bin_data()
    path = tmp_path / "d.jsonl"
    write_jsonl(data, path)
    first = json.loads(path.read_text().splitlines()[0])
    assert set(first) == {"z", "s", "a", "r", "s2", "t"}
    back = read_jsonl(path)
    for col in ("z", "s", "a", "r", "s2", "t"):
        np.testing.assert_array_equal(getattr(back, col), getattr(data, col))
