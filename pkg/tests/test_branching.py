import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sweepsim import branching as bp
from sweepsim.stats import brute_force_fixation


# ----------------------------------------------------------- closed forms

def test_fixation_probability_examples():
    assert bp.fixation_probability(2, 1.0) == pytest.approx(2 / 3)
    assert bp.fixation_probability(10, 0.0) == pytest.approx(0.1)
    assert bp.fixation_probability(100_000, 0.1) == pytest.approx(0.1 / 1.1, rel=1e-12)
    assert bp.fixation_probability(100, 0.1) == pytest.approx(0.0909, abs=5e-5)


@pytest.mark.parametrize("N,s", [(2, 1.0), (10, 0.0), (10, 0.3), (37, 0.05)])
def test_fixation_probability_vs_linear_system(N, s):
    assert bp.fixation_probability(N, s) == pytest.approx(brute_force_fixation(N, s), rel=1e-9)


def test_survival_probability_examples():
    assert bp.survival_probability(bp.BranchingSpec(1.25, 1.0)) == pytest.approx(0.2)
    assert bp.survival_probability(bp.BranchingSpec(1.0, 1.0)) == 0
    s, k = 0.1, 3
    assert bp.survival_probability(bp.BranchingSpec((1 + s) ** k, 1.0)) == \
        pytest.approx(1 - (1 + s) ** -k)


def test_conditioned_total_progeny_examples():
    assert bp.conditioned_total_progeny(1, 0.2) == pytest.approx(5.0)
    assert bp.conditioned_total_progeny(2, 0.1) == pytest.approx(1 / 0.21)
    assert bp.conditioned_total_progeny(3, 0.05) <= 1 / (0.05 * 3)


@given(st.integers(1, 30), st.floats(1e-4, 2.0))
def test_conditioned_progeny_bound(k, s):
    assert bp.conditioned_total_progeny(k, s) <= 1 / (s * k) * (1 + 1e-12)


def test_two_type_decomposition_example():
    tt = bp.two_type_decomposition(0.5)
    assert tt.q == pytest.approx(2 / 3)
    assert (tt.finite_birth, tt.finite_death) == pytest.approx((1.0, 1.5))
    assert tt.infinite_rate == pytest.approx(0.5)


@given(st.floats(0.01, 3.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_decomposition_generators(s, x, y):
    """u^(F)(x) = u(qx)/q and u^(I)(x,y) = (u(qx+(1-q)y) - u(qx))/(1-q)."""
    b, d = 1 + s, 1.0
    tt = bp.decompose(bp.BranchingSpec(b, d))
    q = tt.q
    u = lambda z: d + b * z * z - (b + d) * z  # noqa: E731
    uF = tt.finite_death + tt.finite_birth * x * x - (tt.finite_birth + tt.finite_death) * x
    assert uF == pytest.approx(u(q * x) / q, abs=1e-12)
    uI = (tt.mixed_rate * x * y + tt.infinite_rate * y * y
          - (tt.mixed_rate + tt.infinite_rate) * y)
    assert uI == pytest.approx((u(q * x + (1 - q) * y) - u(q * x)) / (1 - q), abs=1e-12)


def test_moments_examples():
    gf = bp.GeneratingFunctionSpec.binary(1.2, 1.0)
    assert gf.lam == pytest.approx(0.2) and gf.u2 == pytest.approx(2.4)
    assert bp.moments(gf, 0.0) == (1.0, 0.0)
    m, v = bp.moments(gf, 1.0)
    assert v == pytest.approx(11 * (math.exp(0.4) - math.exp(0.2)))
    assert v == pytest.approx(2.9746, abs=1e-4)
    assert bp.moments(gf, 5.0)[0] == pytest.approx(math.e)
    with pytest.raises(ValueError):
        bp.moments(bp.GeneratingFunctionSpec.binary(1.0, 1.0), 1.0)


def test_generating_function_validation():
    with pytest.raises(ValueError):
        bp.GeneratingFunctionSpec(1.0, (0.5, 0.6))
    gf = bp.GeneratingFunctionSpec(2.0, (0.2, 0.3, 0.5))
    assert gf.u(1.0) == pytest.approx(0.0)


def test_yule_law_examples():
    law = bp.yule_law(1.0, 0.0)
    assert law.pmf(1) == pytest.approx(1.0)
    law = bp.yule_law(2.0, math.log(2) / 2)
    assert law.p == pytest.approx(0.5) and law.mean == pytest.approx(2.0)
    assert law.pmf(np.arange(1, 200)).sum() == pytest.approx(1.0)
    # toy values with e^(-rate t) = kappa s / log N give (1 - kappa s / log N)^m
    kappa, s, logN = 0.1, 0.01, 100.0
    m = math.floor(logN / s)
    law = bp.yule_law(1.0, -math.log(kappa * s / logN))
    assert law.tail(m) == pytest.approx((1 - kappa * s / logN) ** m)
    assert law.tail(3) == pytest.approx(law.dist.sf(3))


def test_escape_level():
    spec = bp.BranchingSpec(2.0, 1.0)
    m = bp.escape_level(spec, 1e-6)
    assert 0.5 ** m <= 1e-6 < 0.5 ** (m - 1)
    with pytest.raises(ValueError):
        bp.escape_level(bp.BranchingSpec(1.0, 1.0))


# ------------------------------------------------------------ simulators

def test_pure_death_extinction_time(rng):
    b = bp.simulate_batch(bp.BranchingSpec(0.0, 1.0), 100_000, rng)
    assert (b.outcome == bp.EXTINCT).all()
    assert bp.mean_check("extinction_time", b.end_time, 1.0).passed


def test_immigrant_interarrival_mean(rng):
    from sweepsim.couplings import concatenated_gaps
    N, mu, s, gamma, zeta = 1000, 1e-3, 0.1, 0.9, 0.05
    spec = bp.BranchingSpec(1 + gamma * s, 1.0, (1 - zeta) * N * mu, initial=0)
    paths = [bp.simulate_branching(spec, rng, horizon=50.0) for _ in range(60)]
    assert all(p.outcome == "horizon" for p in paths)
    gaps = concatenated_gaps([p.immigrant_times for p in paths], [50.0] * len(paths))
    assert len(gaps) > 2000
    assert bp.mean_check("gap", gaps, 1 / ((1 - zeta) * N * mu)).passed


def test_survival_frequency(rng):
    spec = bp.BranchingSpec(1.2, 1.0)
    b = bp.simulate_batch(spec, 100_000, rng, escape=bp.escape_level(spec))
    c = bp.proportion_check("survival", int((b.outcome == bp.ESCAPED).sum()), 100_000,
                            bp.survival_probability(spec))
    assert c.passed, c.line()


def test_event_cap_marks_undecided(rng):
    b = bp.simulate_batch(bp.BranchingSpec(1.0, 1.0, initial=50), 10, rng, max_events=5)
    assert b.n_undecided == 10


def test_single_path_record(rng):
    path = bp.simulate_branching(bp.BranchingSpec(1.0, 1.0, initial=3), rng)
    assert path.outcome == "extinct" and path.final_size == 0
    assert path.sizes[-1] == 0 and path.births + 3 == path.deaths


def test_yule_sample_chisquare(rng):
    law = bp.yule_law(1.0, 1.0)
    chi, p, bins = bp.yule_chisquare(bp.simulate_yule(1.0, 1.0, 50_000, rng), law)
    assert p > 0.001 and bins >= 5


def test_checks_negative_control():
    """A deliberately wrong target must fail."""
    x = np.random.default_rng(0).exponential(1.0, 10_000)
    assert not bp.mean_check("wrong", x, 1.1).passed
    assert not bp.proportion_check("wrong", 500, 1000, 0.45).passed
    law = bp.yule_law(1.0, 1.0)
    wrong = bp.simulate_yule(1.0, 1.3, 50_000, np.random.default_rng(1))
    assert bp.yule_chisquare(wrong, law)[1] < 1e-6


def test_variance_check_on_known_law(rng):
    x = rng.normal(0.0, 2.0, 100_000)
    assert bp.variance_check("var", x, 4.0).passed
    assert not bp.variance_check("var", x, 4.5).passed


def test_pooled_chisquare_pools_small_bins():
    obs = np.array([50, 30, 15, 3, 1, 1])
    exp = np.array([50, 30, 14, 4, 1.5, 0.5])
    stat, p, bins = bp.pooled_chisquare(obs, exp)
    assert bins == 4
    with pytest.raises(ValueError):
        bp.pooled_chisquare(np.array([3.0]), np.array([3.0]))


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 1.0), st.integers(0, 2**32 - 1))
def test_conditioned_process_is_subcritical(s, seed):
    """Conditioned on extinction (finite-line rates) every path dies."""
    fin = bp.two_type_decomposition(s).finite_spec()
    b = bp.simulate_batch(fin, 200, np.random.default_rng(seed))
    assert (b.outcome == bp.EXTINCT).all()
