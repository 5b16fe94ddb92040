"""Acceptance criteria 1-8 at their stated sizes and tolerances.

Every criterion records one PASS/FAIL line, printed in the terminal summary.
Seeds are pinned.
"""
import math
import time

import numpy as np
import pytest

from sweepsim import branching as bp
from sweepsim import stats
from sweepsim.couplings import CouplingConstants
from sweepsim.model import (Parameters, PopulationState, StopCondition, per_type_rates,
                            replacement_rate, run)

from conftest import record_criterion

DESK = stats.ExperimentConfig(N=2000, mu=1e-6, s=0.15, eta=0.5, K=10, replicates=20,
                              seed=12345)


def _check(number, ok, detail):
    record_criterion(number, ok, detail)
    assert ok, detail


# ------------------------------------------------------------ criterion 1

def test_criterion1_fixation_probability():
    t = time.perf_counter()
    rep = stats.verify_classical(N_fix=100, s_fix=0.1, runs_fix=100_000, N_dur=1000,
                                 s_dur=0.1, fixed_target=0, seed=2024)
    elapsed = time.perf_counter() - t
    c = rep.checks[0]
    ok = c.passed and elapsed <= 120 and rep.included == 100_000
    _check(1, ok, f"fixation {c.value:.5f} vs {bp.fixation_probability(100, 0.1):.5f} "
                  f"({c.threshold}), {elapsed:.1f}s")


# ------------------------------------------------------------ criterion 2

def test_criterion2_sweep_duration():
    t = time.perf_counter()
    rep = stats.verify_classical(N_fix=100, s_fix=0.1, runs_fix=1000, N_dur=1000, s_dur=0.1,
                                 fixed_target=2000, seed=2025)
    elapsed = time.perf_counter() - t
    c = rep.checks[1]
    n_fixed = int(c.detail.split("fixed=")[1].split(",")[0])
    ok = c.passed and n_fixed >= 2000 and elapsed <= 300
    _check(2, ok, f"mean duration {c.value:.2f} {c.threshold}, {c.detail}, {elapsed:.1f}s")


# ------------------------------------------------------------ criterion 3

@pytest.fixture(scope="module")
def theorem1_report():
    t = time.perf_counter()
    rep = stats.verify_theorem1(DESK)
    return rep, time.perf_counter() - t


def test_criterion3_theorem1(theorem1_report):
    rep, elapsed = theorem1_report
    assert DESK.params.in_regime()
    got = {c.name: c for c in rep.checks}
    n = len(rep.data["increments"])
    ok = rep.passed and n == 200 and elapsed <= 1800
    detail = ", ".join(f"{c.name}={c.value:.4g} [{'ok' if c.passed else 'fail'}]"
                       for c in got.values())
    _check(3, ok, f"{detail}; n={n}, {elapsed:.1f}s")


def test_criterion3_event_throughput():
    """Core-loop throughput target of 2e7 events per second on one core."""
    p = DESK.params
    init = PopulationState.monomorphic(p.N)
    run(p, init, StopCondition(max_events=1000), np.random.default_rng(0), record=False)
    best = 0.0
    for rep in range(3):
        t = time.perf_counter()
        traj = run(p, init, StopCondition(max_events=2 * 10**7), np.random.default_rng(rep),
                   record=False)
        best = max(best, traj.n_events / (time.perf_counter() - t))
    ok = best >= 2e7
    record_criterion(3, ok, f"core-loop throughput {best / 1e6:.1f}M events/s (target 20M)")
    assert ok


# ------------------------------------------------------------ criterion 4

def _timed(fn):
    t = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t


def test_criterion4_branching_closed_forms():
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(404)))
    n = 100_000
    lines, ok = [], True

    def add(check, elapsed):
        nonlocal ok
        ok &= check.passed and elapsed <= 120
        lines.append(f"{check.name} z={check.z:+.2f}")

    spec = bp.BranchingSpec(1.2, 1.0)
    b, el = _timed(lambda: bp.simulate_batch(spec, n, rng, escape=bp.escape_level(spec)))
    add(bp.proportion_check("survival", int((b.outcome == bp.ESCAPED).sum()), n,
                            bp.survival_probability(spec)), el)

    spec = bp.BranchingSpec(1.21, 1.0)
    b, el = _timed(lambda: bp.simulate_batch(spec, n, rng, escape=bp.escape_level(spec)))
    add(bp.mean_check("progeny", b.integral[b.outcome == bp.EXTINCT],
                      bp.conditioned_total_progeny(2, 0.1)), el)

    gf = bp.GeneratingFunctionSpec.binary(1.2, 1.0)
    for t in (0.5, 1.0, 2.0):
        b, el = _timed(lambda: bp.simulate_batch(bp.BranchingSpec(1.2, 1.0), n, rng,
                                                 horizon=t))
        m, v = bp.moments(gf, t)
        add(bp.mean_check(f"mean_t{t:g}", b.final, m), el)
        add(bp.variance_check(f"var_t{t:g}", b.final, v), el)
    _check(4, ok, "; ".join(lines))


# ------------------------------------------------------------ criterion 5

def test_criterion5_yule_geometric():
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(505)))
    ps = []
    for rt in (0.5, 1.0, 2.0):
        _, p, _ = bp.yule_chisquare(bp.simulate_yule(1.0, rt, 100_000, rng), bp.yule_law(1.0, rt))
        ps.append(p)
    _check(5, all(p > 0.01 for p in ps),
           "chi-square p " + ", ".join(f"rt={rt:g}:{p:.3f}" for rt, p in zip((0.5, 1, 2), ps)))


# ------------------------------------------------------------ criterion 6

def test_criterion6_coupling_domination():
    rep = stats.verify_couplings(sizes=(200, 1000, 5000), runs=100, seed=606,
                                 consts=CouplingConstants())
    viol = {c.name: c for c in rep.checks if c.name.startswith("violations")}
    mono = next(c for c in rep.checks if c.name == "flagged_fraction_nonincreasing")
    ok = all(c.passed for c in viol.values()) and mono.passed
    _check(6, ok, f"violations {[int(c.value) for c in viol.values()]}, "
                  f"flagged fraction {mono.detail}")


def test_criterion6_marginal_laws_reported():
    """Statistical side of the couplings (not part of the exact criterion)."""
    rep = stats.verify_couplings(sizes=(1000,), runs=100, seed=607)
    failed = [c.name for c in rep.checks if not c.passed]
    assert not failed, rep.to_text()


# ------------------------------------------------------------ criterion 7

def test_criterion7_corollary():
    cfg = stats.ExperimentConfig(N=2000, mu=1e-6, s=0.15, eta=0.5, K=10, replicates=200,
                                 seed=12345)
    rep = stats.verify_corollary(cfg, rescaled_times=(1.0,))  # asserts the bound inside
    c = next(c for c in rep.checks if c.name == "xbar_mean_t1")
    ok = c.passed and rep.data["bound_checked_states"] > 0
    _check(7, ok, f"bound held on {rep.data['bound_checked_states']} states "
                  f"(bound {rep.data['bound']:.4f}); mean Xbar(t=1) = {c.value:.3f} {c.threshold}")


# ------------------------------------------------------------ criterion 8

def test_criterion8_invariants():
    t0 = time.perf_counter()
    results = {}

    # conservation and cache coherence on a debug run
    p = Parameters(500, 1e-4, 0.1, 0.5)
    traj = run(p, PopulationState.monomorphic(500), StopCondition(max_events=300_000),
               np.random.default_rng(8001), debug=True)
    m = traj.count_matrix()
    results["conservation"] = traj.status == "event_cap" and bool((m.sum(axis=1) == 500).all())
    results["cache_coherence"] = traj.coherence_checks >= 30 and traj.max_fitness_drift < 1e-9

    # rate identity at every 1000th state of the same run
    ok = True
    for row in m[::1000]:
        st = PopulationState.from_counts(np.append(row, 0), p.s)
        for k in np.flatnonzero(row):
            d = per_type_rates(st, int(k), p)[2]
            out = math.fsum(replacement_rate(st, int(k), j, p)
                            for j in range(len(st.counts)) if j != k)
            ok &= math.isclose(row[k] * d, out, rel_tol=1e-9)
    results["rate_identity"] = ok

    # replay determinism
    final = None
    for final in traj.replay():
        pass
    results["replay"] = bool(np.array_equal(np.trim_zeros(final.counts, "b"),
                                            np.trim_zeros(traj.final_counts, "b")))
    again = run(p, PopulationState.monomorphic(500), StopCondition(max_events=300_000),
                np.random.default_rng(8001))
    results["seed_determinism"] = bool(np.array_equal(again.times, traj.times))

    # neutral martingale
    pn = Parameters(20, 0.0, 0.0)
    init = PopulationState.from_counts([12, 8], 0.0)
    rng = np.random.default_rng(8002)
    x = np.array([run(pn, init, StopCondition(horizon=3.0), rng, record=False).final_counts[1]
                  for _ in range(10_000)], dtype=float)
    results["neutral_martingale"] = abs(x.mean() - 8) <= 3 * x.std(ddof=1) / math.sqrt(len(x))

    elapsed = time.perf_counter() - t0
    ok = all(results.values()) and elapsed <= 300
    _check(8, ok, ", ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in results.items())
           + f", {elapsed:.1f}s")
