import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from sweepsim import stats
from sweepsim.model import Parameters
from sweepsim.observables import StoppingTimeLog

from conftest import make_trajectory

SMALL = dict(N=400, mu=2e-5, s=0.2, eta=0.5, K=3, replicates=4, seed=99)


def test_ks_matches_scipy():
    x = np.random.default_rng(3).exponential(1.0, 300)
    D, p = stats.ks_exp1(x)
    ref = sps.kstest(x, "expon", method="asymp")
    assert D == pytest.approx(ref.statistic, abs=1e-12)
    assert p == pytest.approx(ref.pvalue, rel=1e-6)


def test_ks_needs_twenty_values():
    with pytest.raises(ValueError):
        stats.ks_exp1(np.ones(19))


def test_ks_rejects_wrong_scale():
    x = np.random.default_rng(4).exponential(1.3, 2000)
    assert stats.ks_exp1(x)[1] < 1e-6


def test_ks_self_consistency():
    """Under the null, rejection rate at 1% stays below 1.5% over 1000 trials."""
    rng = np.random.default_rng(2718)
    rej = sum(stats.ks_exp1(rng.exponential(1.0, 500))[1] < 0.01 for _ in range(1000))
    assert rej / 1000 <= 1.5 * 0.01


@given(st.lists(st.floats(0, 50, allow_nan=False), min_size=20, max_size=200))
def test_ks_statistic_bounds(xs):
    D, p = stats.ks_exp1(xs)
    assert 0 <= D <= 1 and 0 <= p <= 1


def test_rescaled_increments_and_exclusion():
    p = Parameters(100, 1e-3, 0.5)
    log = StoppingTimeLog(np.array([0.0, 10.0, 30.0, np.nan]), *(np.full(4, np.nan),) * 4,
                          mutations=np.zeros(4, np.int64))
    inc = stats.rescaled_increments(log, p, 2)
    assert inc == pytest.approx([0.5, 1.0])
    with pytest.raises(stats.Exclusion, match="T_3"):
        stats.rescaled_increments(log, p, 3)


def test_config_defaults_and_validation():
    c = stats.ExperimentConfig()
    assert c.delta == 3 and c.c1 == 3.0
    assert c.c2 == pytest.approx(4 * 1.15 / 0.5 + 3)
    assert c.params.in_regime()
    with pytest.raises(ValueError):
        stats.ExperimentConfig(K=0)
    with pytest.raises(ValueError):
        stats.ExperimentConfig(significance=1.5)
    with pytest.raises(ValueError):
        stats.ExperimentConfig(N=1)


def test_window_checks_hand_built():
    # three types, delta = 1; window for k = 1 is [1, 3)
    p = Parameters(4, 0.1, 0.5)
    traj = make_trajectory(p, [4], [(0.5, 1, 0, 1), (1.0, 0, 0, 1), (2.0, 0, 0, 1),
                                    (2.5, 1, 1, 2), (4.0, 0, 0, 1)], final_time=5.0)
    init = np.zeros(4, np.int64)
    init[0] = 4
    f, w, n = np.empty(1, np.bool_), np.empty(1, np.bool_), np.empty(1, np.int64)
    # states in [1, 3): (2,2,0), (1,3,0), (1,2,1); type 0 is still present
    stats._window_checks(traj.times, traj.src, traj.dst, init, 0.0, 1, 1,
                         np.array([1.0]), np.array([3.0]), 4, 2.0, 1, f, w, n)
    assert n[0] == 3 and f[0] and not w[0]
    stats._window_checks(traj.times, traj.src, traj.dst, init, 0.0, 1, 1,
                         np.array([1.0]), np.array([3.0]), 4, 3.0, 1, f, w, n)
    assert not f[0]
    stats._window_checks(traj.times, traj.src, traj.dst, init, 0.0, 1, 1,
                         np.array([np.inf]), np.array([-np.inf]), 4, 3.0, 1, f, w, n)
    assert n[0] == 0


def test_theorem1_report_is_deterministic():
    cfg = stats.ExperimentConfig(**SMALL)
    a = stats.verify_theorem1(cfg).to_json()
    b = stats.verify_theorem1(cfg).to_json()
    assert a == b
    c = stats.verify_theorem1(stats.ExperimentConfig(**SMALL, workers=2)).to_json()
    assert a == c


def test_theorem1_report_contents():
    rep = stats.verify_theorem1(stats.ExperimentConfig(**SMALL))
    out = json.loads(rep.to_json())
    assert out["schema_version"] == stats.SCHEMA_VERSION
    assert out["included"] + out["excluded"] == out["total_replicates"] == 4
    assert len(out["data"]["increments"]) == 3 * out["included"]
    names = [c["name"] for c in out["checks"]]
    assert names == ["ks_exp1_pvalue", "fastsweep_fraction", "width_fraction"]
    assert "suite theorem1" in rep.to_text()


def test_event_cap_exclusions_are_counted():
    cfg = stats.ExperimentConfig(**(SMALL | {"max_events": 3_000}))
    rep = stats.verify_theorem1(cfg)
    assert rep.exclusions and rep.included + len(rep.exclusions) == rep.total_replicates
    assert all("event cap" in why for _, why in rep.exclusions)


def test_no_mutation_excludes_everything():
    rep = stats.verify_theorem1(stats.ExperimentConfig(**(SMALL | {"mu": 0.0})))
    assert not rep.passed and rep.included == 0


def test_corollary_small():
    cfg = stats.ExperimentConfig(**(SMALL | {"replicates": 6}))
    rep = stats.verify_corollary(cfg, rescaled_times=(1.0,), grid=50)
    assert rep.data["bound_checked_states"] > 0
    assert rep.data["bound"] == pytest.approx(stats.mean_bound(cfg.params, 3))
    assert len(rep.data["xbar_t1"]) == 6


def test_mean_bound_value():
    p = Parameters(1000, 1e-6, 0.1, 0.5)
    assert stats.mean_bound(p, 3) == pytest.approx(6 * math.log(1000) / 100)


def test_classical_small():
    rep = stats.verify_classical(N_fix=20, s_fix=0.3, runs_fix=5000, N_dur=50, s_dur=0.3,
                                 fixed_target=200, seed=5)
    assert rep.checks[0].name == "fixation_frequency" and rep.checks[0].passed
    assert rep.checks[1].name == "sweep_duration_mean"


def test_report_json_rejects_unknown_objects():
    rep = stats.VerificationReport("x", {})
    rep.data["bad"] = object()
    with pytest.raises(TypeError):
        rep.to_json()
