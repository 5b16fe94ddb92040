import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sweepsim.model import Parameters, PopulationState, StopCondition, run
from sweepsim.observables import (SweepReport, derived_constants, detect_stopping_times,
                                  mean_mutation_count, support_series, sweep_count,
                                  sweep_width, width_profile)

from conftest import make_trajectory


def test_sweep_width_values():
    assert sweep_width(0.5) == 3
    assert sweep_width(0.75) == 5
    for eta in (0.0, 1.0, -0.2):
        with pytest.raises(ValueError):
            sweep_width(eta)


def test_theta_hand_value():
    dc = derived_constants(Parameters(1000, 1e-6, 0.1, 0.5))
    assert dc.theta == pytest.approx(1e-2)
    assert len(dc.beta) == dc.delta == 3


def test_beta_formula_and_monotone():
    p = Parameters(2000, 1e-6, 0.15, 0.5)
    dc = derived_constants(p)
    L = math.log(2000)
    for k in range(1, dc.delta + 1):
        want = dc.theta ** 0.5 * 1e-6 ** (k - 1) * L ** (2 * k - 1) / 0.15 ** k
        assert dc.beta_k(k) == pytest.approx(want, rel=1e-12)
    assert all(a > b for a, b in zip(dc.beta, dc.beta[1:]))


def test_no_stopping_times_without_mutation():
    p = Parameters(100, 0.0, 0.1)
    traj = run(p, PopulationState.monomorphic(100), StopCondition(horizon=50.0),
               np.random.default_rng(0))
    log = detect_stopping_times(traj)
    assert all(math.isnan(log.T(k)) for k in range(1, 5))


def test_hand_built_crossing():
    # N=10, s=1: threshold log(10) = 2.30, so X_1 > 2.30 first at X_1 = 3
    p = Parameters(10, 0.1, 1.0)
    ev = [(0.5, 1, 0, 1), (1.0, 0, 0, 1), (2.0, 0, 0, 1), (3.2, 0, 1, 0), (4.1, 0, 0, 1)]
    traj = make_trajectory(p, [10], ev, final_time=5.0)
    log = detect_stopping_times(traj)
    assert log.T(1) == 2.0  # third event lifts X_1 to 3
    assert log.T(0) == 0.0  # X_0(0) = 10 > 2.30
    assert log.T_prime(0) == 0.0
    assert log.mutations[1] == 1


def test_sweep_count_examples():
    p = Parameters(10, 0.1, 1.0)
    traj = make_trajectory(p, [10], [], final_time=1.0)
    log = detect_stopping_times(traj)
    log.established = np.array([0.0, 5.0, 12.0, np.nan])
    assert sweep_count(log, 12.0) == 2
    assert sweep_count(log, 4.9) == 0
    assert sweep_count(log, 0.0) == 0


def test_mean_mutation_count_examples():
    assert mean_mutation_count(PopulationState.monomorphic(7)) == 0
    assert mean_mutation_count(PopulationState.monomorphic(7, k=3)) == 3
    assert mean_mutation_count(PopulationState.from_counts({1: 2, 2: 2}, 0.1)) == 1.5


def test_width_profile_examples():
    p = Parameters(6, 0.1, 0.5)
    traj = make_trajectory(p, [0, 0, 3, 0, 3],
                           [(1.0, 0, 4, 2), (2.0, 0, 2, 3)], final_time=3.0)
    prof = width_profile(traj, [0.5, 1.0, 1.5, 2.5])
    assert prof == [(2, 4), (2, 4), (2, 4), (2, 4)]
    mono = make_trajectory(p, [0, 6], [], final_time=1.0)
    assert width_profile(mono, [0.3]) == [(1, 1)]


def test_state_between_events_is_last_event_state():
    p = Parameters(4, 0.1, 0.5)
    traj = make_trajectory(p, [4], [(1.0, 1, 0, 1), (2.0, 0, 0, 1)], final_time=3.0)
    assert list(traj.state_at(1.5).counts[:2]) == [3, 1]
    assert list(traj.state_at(2.0).counts[:2]) == [2, 2]


@settings(max_examples=12, deadline=None)
@given(st.integers(0, 10**6))
def test_online_offline_agree(seed):
    p = Parameters(300, 3e-4, 0.25, 0.5)
    traj = run(p, PopulationState.monomorphic(300),
               StopCondition(until="established", type=4, max_events=5 * 10**6),
               np.random.default_rng(seed))
    off = detect_stopping_times(traj)
    assert traj.online_log.equals(off)
    # structural properties of the log
    Tp = off.cleared[~np.isnan(off.cleared)]
    assert (np.diff(Tp) >= 0).all()
    for k in range(1, off.n_types):
        if not math.isnan(off.T(k)) and not math.isnan(off.T_alpha(k)):
            assert off.T(k) <= off.T_alpha(k)


def test_mean_count_changes_by_event_size(small_params):
    traj = run(small_params, PopulationState.monomorphic(200),
               StopCondition(max_events=20_000), np.random.default_rng(8))
    m = traj.count_matrix()
    xbar = m @ np.arange(m.shape[1]) / 200
    step = np.diff(xbar)
    assert np.allclose(step, (traj.dst - traj.src) / 200)
    assert (step[traj.kinds == 1] > 0).all()
    lo, hi = support_series(traj)
    occupied = (m > 0).sum(axis=1)
    assert (hi - lo >= occupied - 1).all()


def test_sweep_report_csv(small_params):
    traj = run(small_params, PopulationState.monomorphic(200),
               StopCondition(until="established", type=3, max_events=10**7),
               np.random.default_rng(11))
    rep = SweepReport()
    rep.add(0, traj.online_log, small_params, 2)
    lines = rep.to_csv().splitlines()
    assert lines[0] == "replicate,k,T_k,T_k_prime,T_k_alpha,tau_k,rescaled_increment"
    assert len(lines) == 3
    T1 = traj.online_log.T(1)
    inc = float(lines[1].split(",")[-1])
    assert inc == pytest.approx(200 * 2e-4 * 0.2 * T1)
