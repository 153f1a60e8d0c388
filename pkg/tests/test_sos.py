"""Joint recovery state space, trajectories, and recovery-curve estimators."""

from __future__ import annotations

import time

import numpy as np
import pytest

from sosrecovery.recovery import (
    LognormalRecovery,
    PiecewiseLinearRecovery,
    RecoveryFunctionSet,
    WeibullRecovery,
)
from sosrecovery.sos import (
    MAX_SYSTEMS,
    RealizationTrajectory,
    assemble_functionality,
    build_state_space,
    equal_impact_functionality,
    estimate_recovery_curve_mc,
    exact_functionality_moments,
    exact_recovery_curve_independent,
    functionality_of_trajectory,
    initial_all_failed,
    simulate_realization_clocks,
)


def exp_set(n, scale=1.0):
    return RecoveryFunctionSet(
        functions=tuple(WeibullRecovery(shape=1.0, scale=scale) for _ in range(n))
    )


def test_state_ordering_two_systems():
    space = build_state_space(2)
    assert [tuple(sorted(s)) for s in space.states] == [(), (0,), (1,), (0, 1)]
    assert space.n_states == 4
    assert space.index_of(()) == 0
    assert space.index_of((1,)) == 2
    assert space.index_of((0, 1)) == 3


def test_state_ordering_by_cardinality_then_lex():
    space = build_state_space(4)
    assert space.n_states == 16
    sizes = [len(s) for s in space.states]
    assert sizes == sorted(sizes)
    # within each cardinality block, lexicographic order of the member tuples
    assert [tuple(sorted(s)) for s in space.states[1:5]] == [(0,), (1,), (2,), (3,)]
    assert [tuple(sorted(s)) for s in space.states[5:8]] == [(0, 1), (0, 2), (0, 3)]
    assert tuple(sorted(space.states[-1])) == (0, 1, 2, 3)


def test_state_space_size_limit():
    with pytest.raises(ValueError):
        build_state_space(MAX_SYSTEMS + 1)
    with pytest.raises(ValueError):
        build_state_space(0)


def test_equal_impact_functionality_vector():
    space = build_state_space(2)
    np.testing.assert_allclose(
        equal_impact_functionality(space), [0.0, 0.5, 0.5, 1.0]
    )
    space4 = build_state_space(4)
    F = equal_impact_functionality(space4)
    assert F[0] == 0.0 and F[-1] == 1.0
    assert set(np.round(F, 6)) == {0.0, 0.25, 0.5, 0.75, 1.0}


def test_initial_all_failed():
    space = build_state_space(3)
    e0 = initial_all_failed(space)
    assert e0[0] == 1.0 and e0.sum() == 1.0


def test_trajectory_event_order():
    traj = RealizationTrajectory(recovery_times=np.array([3.0, 1.0, 2.0, 4.0]))
    np.testing.assert_array_equal(traj.event_times, [1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(traj.event_systems, [1, 2, 0, 3])


def test_trajectory_tie_break_by_system_index():
    traj = RealizationTrajectory(recovery_times=np.array([2.0, 1.0, 1.0]))
    np.testing.assert_array_equal(traj.event_systems, [1, 2, 0])


def test_functionality_of_trajectory_step_path():
    space = build_state_space(3)
    F = equal_impact_functionality(space)
    traj = RealizationTrajectory(recovery_times=np.array([3.0, 1.0, 2.0]))
    t = np.array([0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 10.0])
    vals = functionality_of_trajectory(traj, space, F, t)
    # right-continuous: jumps counted at their own time
    np.testing.assert_allclose(vals, [0, 0, 1 / 3, 1 / 3, 2 / 3, 2 / 3, 1.0, 1.0])


def test_simulate_realization_is_deterministic():
    fset = exp_set(3)
    a = simulate_realization_clocks(fset, np.random.default_rng(5))
    b = simulate_realization_clocks(fset, np.random.default_rng(5))
    np.testing.assert_array_equal(a.recovery_times, b.recovery_times)


def test_exact_curve_two_exponentials():
    # P(recovered by t) per system = 1 - e^-t; equal impact mean is the average
    fset = exp_set(2)
    space = build_state_space(2)
    F = equal_impact_functionality(space)
    t = np.linspace(0.0, 3.0, 10)
    curve = exact_recovery_curve_independent(fset, space, F, t)
    np.testing.assert_allclose(curve.values, 1.0 - np.exp(-t), rtol=1e-12)


def test_exact_state_probability_example():
    # phi = (0.5, 0.4): P(only system 0 recovered) = 0.5 * 0.6 = 0.3
    f0 = PiecewiseLinearRecovery(knots=((0.0, 0.0), (2.0, 1.0)))  # cdf(1) = 0.5
    f1 = PiecewiseLinearRecovery(knots=((0.0, 0.0), (2.5, 1.0)))  # cdf(1) = 0.4
    fset = RecoveryFunctionSet(functions=(f0, f1))
    space = build_state_space(2)
    probs_expected = [0.5 * 0.6, 0.5 * 0.6, 0.5 * 0.4, 0.5 * 0.4]
    indicator = np.eye(4)
    t = np.array([1.0])
    for state, expected in enumerate(probs_expected):
        curve = exact_recovery_curve_independent(fset, space, indicator[state], t)
        assert curve.values[0] == pytest.approx(expected)


def test_exact_moments_match_enumeration():
    fset = exp_set(2)
    space = build_state_space(2)
    F = equal_impact_functionality(space)
    t = np.array([0.7])
    mean, var = exact_functionality_moments(fset, space, F, t)
    phi = 1.0 - np.exp(-0.7)
    # sum of two independent Bernoulli(phi)/2
    assert mean[0] == pytest.approx(phi)
    assert var[0] == pytest.approx(2 * phi * (1 - phi) / 4)


def test_mc_matches_exact_within_confidence():
    fset = RecoveryFunctionSet(
        functions=(
            WeibullRecovery(shape=1.5, scale=1.0),
            LognormalRecovery(median=1.0, sigma=0.5),
            WeibullRecovery(shape=1.0, scale=2.0),
        )
    )
    space = build_state_space(3)
    F = equal_impact_functionality(space)
    t = np.linspace(0.0, 6.0, 13)
    curve = estimate_recovery_curve_mc(fset, space, F, t, 20_000, seed=1)
    mean, var = exact_functionality_moments(fset, space, F, t)
    exact_se = np.sqrt(var / 20_000)
    margin = 4.0 * np.maximum(curve.stderr, exact_se)
    inside = np.abs(curve.values - mean) <= margin + 1e-12
    assert inside.all()


def test_mc_stderr_scales_with_sample_size():
    fset = exp_set(2)
    space = build_state_space(2)
    F = equal_impact_functionality(space)
    t = np.array([1.0])
    small = estimate_recovery_curve_mc(fset, space, F, t, 1_000, seed=0)
    large = estimate_recovery_curve_mc(fset, space, F, t, 16_000, seed=0)
    ratio = small.stderr[0] / large.stderr[0]
    assert ratio == pytest.approx(4.0, rel=0.25)


def test_mc_is_deterministic_and_chunk_invariant():
    fset = exp_set(2)
    space = build_state_space(2)
    F = equal_impact_functionality(space)
    t = np.linspace(0.0, 3.0, 5)
    a = estimate_recovery_curve_mc(fset, space, F, t, 500, seed=7)
    b = estimate_recovery_curve_mc(fset, space, F, t, 500, seed=7)
    c = estimate_recovery_curve_mc(fset, space, F, t, 500, seed=7, chunk_size=13)
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_allclose(a.values, c.values, rtol=1e-12)


def test_mc_single_realization_is_step_path():
    fset = exp_set(2)
    space = build_state_space(2)
    F = equal_impact_functionality(space)
    t = np.linspace(0.0, 5.0, 21)
    curve = estimate_recovery_curve_mc(fset, space, F, t, 1, seed=3)
    assert set(np.round(curve.values, 12)) <= {0.0, 0.5, 1.0}
    assert np.all(np.diff(curve.values) >= 0)
    np.testing.assert_array_equal(curve.stderr, np.zeros_like(t))


def test_mc_monotone_for_monotone_functionality():
    fset = exp_set(3, scale=0.8)
    space = build_state_space(3)
    F = equal_impact_functionality(space)
    t = np.linspace(0.0, 4.0, 9)
    curve = estimate_recovery_curve_mc(fset, space, F, t, 2_000, seed=11)
    assert np.all(np.diff(curve.values) >= -1e-12)
    assert curve.values[0] == 0.0


def test_mc_rejects_other_initial_states():
    fset = exp_set(2)
    space = build_state_space(2)
    F = equal_impact_functionality(space)
    wrong = np.zeros(4)
    wrong[1] = 1.0
    with pytest.raises(ValueError):
        estimate_recovery_curve_mc(
            fset, space, F, np.array([1.0]), 10, seed=0, initial=wrong
        )
    ok = initial_all_failed(space)
    curve = estimate_recovery_curve_mc(
        fset, space, F, np.array([1.0]), 10, seed=0, initial=ok
    )
    assert curve.values.shape == (1,)


def test_equal_impact_linearity():
    # with F linear in the recovered set, the expected curve is exactly the
    # average of the marginal cdfs, so MC and the per-system average agree
    # realization by realization
    fset = RecoveryFunctionSet(
        functions=(
            WeibullRecovery(shape=1.3, scale=1.0),
            LognormalRecovery(median=2.0, sigma=0.3),
        )
    )
    space = build_state_space(2)
    F = equal_impact_functionality(space)
    t = np.linspace(0.0, 5.0, 11)
    n = 400
    curve = estimate_recovery_curve_mc(fset, space, F, t, n, seed=2)
    # rebuild the same realizations and average indicator functions directly
    from sosrecovery.seeding import child_rng

    acc = np.zeros_like(t)
    for i in range(n):
        u = child_rng(2, i).random(2)
        clocks = np.array([fn.ppf(u[k]) for k, fn in enumerate(fset)])
        acc += (clocks[:, None] <= t[None, :]).mean(axis=0)
    np.testing.assert_allclose(curve.values, acc / n, atol=1e-12)


def test_assemble_functionality_routes():
    space = build_state_space(2)
    F = equal_impact_functionality(space)
    occupancy = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.5, 0.25, 0.25]])
    np.testing.assert_allclose(
        assemble_functionality(occupancy, F), [0.0, 0.625]
    )
    R = np.zeros((2, 4, 4))
    R[0] = np.eye(4)
    R[1, 0] = [0.0, 0.5, 0.25, 0.25]
    R[1, 1:] = np.eye(4)[1:]
    np.testing.assert_allclose(assemble_functionality(R, F), [0.0, 0.625])
    start = np.array([0.0, 1.0, 0.0, 0.0])
    np.testing.assert_allclose(
        assemble_functionality(R, F, initial=start), [0.5, 0.5]
    )


def test_mc_throughput_budget():
    # 10^5 realizations of a 5-system set should complete in seconds
    fset = exp_set(5)
    space = build_state_space(5)
    F = equal_impact_functionality(space)
    t = np.linspace(0.0, 5.0, 50)
    t0 = time.perf_counter()
    estimate_recovery_curve_mc(fset, space, F, t, 100_000, seed=0)
    assert time.perf_counter() - t0 < 30.0
