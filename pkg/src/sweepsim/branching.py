"""Closed forms and simulators for linear birth-death branching processes.

Every auxiliary process used by the couplings is a binary-fission process
with per-individual birth rate ``birth``, death rate ``death`` and an
optional Poisson stream of immigrants at rate ``immigration``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit
from scipy import stats

EVENT_CAP = 10**7

# outcome codes for single-path runs
EXTINCT = 0
HORIZON = 1
ESCAPED = 2
UNDECIDED = 3
OUTCOME_NAMES = {EXTINCT: "extinct", HORIZON: "horizon", ESCAPED: "escaped",
                 UNDECIDED: "undecided"}


def fixation_probability(N: int, s: float) -> float:
    """Probability that a single type-1 individual among N-1 type-0 ones
    takes over the population (mu = 0): s / ((1+s)(1 - (1+s)**-N))."""
    if N < 2:
        raise ValueError("N must be >= 2")
    if s < 0:
        raise ValueError("s must be >= 0")
    if s == 0:
        return 1.0 / N
    return s / ((1.0 + s) * -math.expm1(-N * math.log1p(s)))


@dataclass(frozen=True)
class BranchingSpec:
    birth: float
    death: float
    immigration: float = 0.0
    initial: int = 1

    def __post_init__(self):
        if self.birth < 0 or self.death < 0 or self.immigration < 0 or self.initial < 0:
            raise ValueError("rates and initial size must be non-negative")

    @property
    def growth_rate(self) -> float:
        return self.birth - self.death

    @property
    def extinction_probability(self) -> float:
        """q = min(1, death/birth) for one individual without immigration."""
        if self.birth <= self.death:
            return 1.0
        return self.death / self.birth


def survival_probability(spec: BranchingSpec) -> float:
    """max(0, 1 - death/birth); the critical and subcritical cases give 0."""
    if spec.birth <= 0:
        return 0.0
    return max(0.0, 1.0 - spec.death / spec.birth)


def conditioned_total_progeny(k: int, s: float) -> float:
    """E[int_0^inf Y dt | extinction] for birth (1+s)**k, death 1, Y(0) = 1.

    Conditioned on extinction the process has birth 1 and death (1+s)**k,
    whence 1 / ((1+s)**k - 1), which never exceeds 1/(s k)."""
    if k < 1 or s <= 0:
        raise ValueError("need k >= 1 and s > 0")
    val = 1.0 / math.expm1(k * math.log1p(s))
    assert val <= 1.0 / (s * k) * (1 + 1e-12)
    return val


@dataclass(frozen=True)
class TwoTypeSpec:
    """Finite/infinite line-of-descent decomposition of a supercritical
    binary-fission process.

    A finite-line individual gives birth at ``finite_birth`` and dies at
    ``finite_death``.  An infinite-line individual splits into two
    infinite-line individuals at ``infinite_rate`` and produces a
    finite-line offspring at ``mixed_rate``; it never dies.
    """

    q: float
    finite_birth: float
    finite_death: float
    infinite_rate: float
    mixed_rate: float

    def finite_spec(self, initial: int = 1) -> BranchingSpec:
        return BranchingSpec(self.finite_birth, self.finite_death, 0.0, initial)


def decompose(spec: BranchingSpec) -> TwoTypeSpec:
    """Line-of-descent decomposition for any supercritical (birth, death).

    With u(x) = d + b x^2 - (b+d) x and q = d/b, the finite-line generator
    u(qx)/q = b + d x^2 - (b+d) x swaps the rates, and the infinite-line
    generator (u(qx + (1-q)y) - u(qx))/(1-q) = 2d xy + (b-d) y^2 - (b+d) y."""
    b, d = spec.birth, spec.death
    if not b > d:
        raise ValueError("decomposition needs a supercritical process")
    q = d / b
    return TwoTypeSpec(q=q, finite_birth=d, finite_death=b, infinite_rate=b - d,
                       mixed_rate=2.0 * d)


def two_type_decomposition(s: float) -> TwoTypeSpec:
    """Decomposition of the process with birth 1+s and death 1."""
    if s <= 0:
        raise ValueError("s must be > 0")
    return decompose(BranchingSpec(1.0 + s, 1.0))


@dataclass(frozen=True)
class GeneratingFunctionSpec:
    """Markov branching process: each individual lives an Exp(rate) time and
    is replaced by k offspring with probability ``offspring[k]``."""

    rate: float
    offspring: tuple

    def __post_init__(self):
        p = np.asarray(self.offspring, dtype=float)
        if (p < 0).any() or not math.isclose(p.sum(), 1.0, rel_tol=0, abs_tol=1e-12):
            raise ValueError("offspring probabilities must be non-negative and sum to 1")
        if self.rate < 0:
            raise ValueError("rate must be >= 0")

    @classmethod
    def binary(cls, birth: float, death: float) -> "GeneratingFunctionSpec":
        tot = birth + death
        return cls(tot, (death / tot, 0.0, birth / tot))

    @property
    def lam(self) -> float:
        """u'(1) = rate * (f'(1) - 1)."""
        k = np.arange(len(self.offspring))
        return self.rate * (float(np.dot(k, self.offspring)) - 1.0)

    @property
    def u2(self) -> float:
        """u''(1) = rate * f''(1)."""
        k = np.arange(len(self.offspring))
        return self.rate * float(np.dot(k * (k - 1), self.offspring))

    def u(self, x: float) -> float:
        f = sum(p * x**k for k, p in enumerate(self.offspring))
        return self.rate * (f - x)


def moments(spec: GeneratingFunctionSpec, t: float) -> tuple[float, float]:
    """Mean and variance of Z(t) from Z(0) = 1."""
    lam = spec.lam
    mean = math.exp(lam * t)
    if t == 0:
        return 1.0, 0.0
    if lam == 0:
        raise ValueError("variance formula needs lambda != 0")
    var = (spec.u2 - lam) / lam * (math.exp(2 * lam * t) - math.exp(lam * t))
    return mean, var


@dataclass(frozen=True)
class YuleLaw:
    """Size at time t of a Yule process started from one individual."""

    rate: float
    t: float

    def __post_init__(self):
        if self.rate <= 0 or self.t < 0:
            raise ValueError("need rate > 0 and t >= 0")

    @property
    def p(self) -> float:
        return math.exp(-self.rate * self.t)

    @property
    def dist(self):
        return stats.geom(self.p)

    def pmf(self, n):
        return self.dist.pmf(n)

    @property
    def mean(self) -> float:
        return math.exp(self.rate * self.t)

    def tail(self, m: int) -> float:
        """P(n(t) > m) = (1 - e^{-rate t})**m."""
        return (-math.expm1(-self.rate * self.t)) ** m


def yule_law(rate: float, t: float) -> YuleLaw:
    return YuleLaw(rate, t)


# ---------------------------------------------------------------- simulators

@njit(cache=True)
def _bd_path(n0, birth, death, imm, horizon, max_events, record, rng,
             out_t, out_n, out_imm):
    """Single birth-death-immigration path.

    Returns (outcome, final n, final time, n births, n deaths, n immigrants,
    integral of n dt, recorded events)."""
    n = n0
    t = 0.0
    nb = 0
    nd = 0
    ni = 0
    integral = 0.0
    nrec = 0
    nev = 0
    outcome = HORIZON
    while True:
        if n == 0 and imm == 0.0:
            outcome = EXTINCT
            break
        if nev >= max_events:
            outcome = UNDECIDED
            break
        total = n * (birth + death) + imm
        if total <= 0.0:
            outcome = HORIZON
            integral += n * (horizon - t)
            t = horizon
            break
        dt = rng.exponential() / total
        if t + dt > horizon:
            integral += n * (horizon - t)
            t = horizon
            break
        integral += n * dt
        t += dt
        u = rng.random() * total
        if u < imm:
            n += 1
            ni += 1
            if ni <= out_imm.shape[0]:
                out_imm[ni - 1] = t
        elif u < imm + n * birth:
            n += 1
            nb += 1
        else:
            n -= 1
            nd += 1
        nev += 1
        if record and nrec < out_t.shape[0]:
            out_t[nrec] = t
            out_n[nrec] = n
            nrec += 1
    return outcome, n, t, nb, nd, ni, integral, nrec


@dataclass
class BranchingPath:
    spec: BranchingSpec
    outcome: str
    final_size: int
    final_time: float
    births: int
    deaths: int
    immigrants: int
    integral: float
    times: np.ndarray
    sizes: np.ndarray
    immigrant_times: np.ndarray


def simulate_branching(spec: BranchingSpec, rng: np.random.Generator,
                       horizon: float = math.inf, max_events: int = EVENT_CAP,
                       record: int = 100_000) -> BranchingPath:
    """Exact event-driven path until extinction, ``horizon`` or ``max_events``.

    Up to ``record`` events (and immigrant arrival times) are kept."""
    out_t = np.empty(record)
    out_n = np.empty(record, dtype=np.int64)
    out_imm = np.empty(record)
    oc, n, t, nb, nd, ni, integ, nrec = _bd_path(
        spec.initial, spec.birth, spec.death, spec.immigration, horizon, max_events,
        record > 0, rng, out_t, out_n, out_imm)
    return BranchingPath(spec, OUTCOME_NAMES[oc], n, t, nb, nd, ni, integ,
                         out_t[:nrec].copy(), out_n[:nrec].copy(),
                         out_imm[:min(ni, record)].copy())


@njit(cache=True)
def _bd_batch(n_paths, n0, birth, death, imm, horizon, escape, max_events, rng,
              outcome, final, integral, births, deaths, extinction_time):
    for p in range(n_paths):
        n = n0
        t = 0.0
        acc = 0.0
        nb = 0
        nd = 0
        nev = 0
        oc = HORIZON
        while True:
            if n == 0 and imm == 0.0:
                oc = EXTINCT
                break
            if n >= escape:
                oc = ESCAPED
                break
            if nev >= max_events:
                oc = UNDECIDED
                break
            total = n * (birth + death) + imm
            if total <= 0.0:
                acc += n * (horizon - t)
                t = horizon
                break
            dt = rng.exponential() / total
            if t + dt > horizon:
                acc += n * (horizon - t)
                t = horizon
                break
            acc += n * dt
            t += dt
            u = rng.random() * total
            if u < imm + n * birth:
                n += 1
                if u >= imm:
                    nb += 1
            else:
                n -= 1
                nd += 1
            nev += 1
        outcome[p] = oc
        final[p] = n
        integral[p] = acc
        births[p] = nb
        deaths[p] = nd
        extinction_time[p] = t


@dataclass
class BatchResult:
    outcome: np.ndarray
    final: np.ndarray
    integral: np.ndarray
    births: np.ndarray
    deaths: np.ndarray
    end_time: np.ndarray

    @property
    def n_undecided(self) -> int:
        return int((self.outcome == UNDECIDED).sum())

    def fraction(self, code: int) -> float:
        return float((self.outcome == code).mean())


def simulate_batch(spec: BranchingSpec, n_paths: int, rng: np.random.Generator,
                   horizon: float = math.inf, escape: Optional[int] = None,
                   max_events: int = EVENT_CAP) -> BatchResult:
    """Run ``n_paths`` independent paths.

    Paths reaching ``escape`` individuals stop early and are reported as
    escaped; without immigration the chance that such a path would still
    die out is at most q**escape."""
    esc = np.iinfo(np.int64).max if escape is None else int(escape)
    out = [np.empty(n_paths, dtype=np.int8), np.empty(n_paths, dtype=np.int64),
           np.empty(n_paths), np.empty(n_paths, dtype=np.int64),
           np.empty(n_paths, dtype=np.int64), np.empty(n_paths)]
    _bd_batch(n_paths, spec.initial, spec.birth, spec.death, spec.immigration,
              horizon, esc, max_events, rng, *out)
    return BatchResult(*out)


def escape_level(spec: BranchingSpec, bias: float = 1e-12) -> int:
    """Smallest size m with q**m <= bias."""
    q = spec.extinction_probability
    if q >= 1.0:
        raise ValueError("no escape level for a non-supercritical process")
    if q == 0.0:
        return 1
    return max(1, math.ceil(math.log(bias) / math.log(q)))


@njit(cache=True)
def _two_type_batch(n_paths, horizon, q, fb, fd, irate, mrate, rng, out_f, out_i):
    for p in range(n_paths):
        fin = 0
        inf = 0
        if rng.random() < q:
            fin = 1
        else:
            inf = 1
        t = 0.0
        while True:
            total = fin * (fb + fd) + inf * (irate + mrate)
            if total <= 0.0:
                break
            t += rng.exponential() / total
            if t > horizon:
                break
            u = rng.random() * total
            if u < fin * fb:
                fin += 1
            elif u < fin * (fb + fd):
                fin -= 1
            elif u < fin * (fb + fd) + inf * irate:
                inf += 1
            else:
                fin += 1
        out_f[p] = fin
        out_i[p] = inf


def simulate_two_type(tt: TwoTypeSpec, n_paths: int, horizon: float,
                      rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """(finite-line count, infinite-line count) at ``horizon`` per path.

    The single ancestor is infinite-line with probability 1 - q."""
    f = np.empty(n_paths, dtype=np.int64)
    i = np.empty(n_paths, dtype=np.int64)
    _two_type_batch(n_paths, horizon, tt.q, tt.finite_birth, tt.finite_death,
                    tt.infinite_rate, tt.mixed_rate, rng, f, i)
    return f, i


@njit(cache=True)
def _yule_batch(n_paths, rate, horizon, rng, out):
    for p in range(n_paths):
        n = 1
        t = rng.exponential() / rate
        while t <= horizon:
            n += 1
            t += rng.exponential() / (rate * n)
        out[p] = n


def simulate_yule(rate: float, t: float, n_paths: int, rng: np.random.Generator) -> np.ndarray:
    out = np.empty(n_paths, dtype=np.int64)
    _yule_batch(n_paths, rate, t, rng, out)
    return out


# --------------------------------------------------------------- statistics

@dataclass(frozen=True)
class ZCheck:
    """Monte Carlo estimate compared with a target."""

    name: str
    estimate: float
    se: float
    target: float
    n: int
    k_se: float = 3.0

    @property
    def z(self) -> float:
        if self.se == 0:
            return 0.0 if self.estimate == self.target else math.inf
        return (self.estimate - self.target) / self.se

    @property
    def passed(self) -> bool:
        return abs(self.estimate - self.target) <= self.k_se * self.se

    def line(self) -> str:
        return (f"{self.name}: estimate {self.estimate:.6g} +- {self.se:.3g} "
                f"vs {self.target:.6g} (z={self.z:+.2f}, n={self.n})")


def mean_check(name: str, sample: np.ndarray, target: float) -> ZCheck:
    x = np.asarray(sample, dtype=float)
    return ZCheck(name, float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x))), target, len(x))


def proportion_check(name: str, hits: int, n: int, target: float) -> ZCheck:
    """Binomial frequency; the SE uses the target probability."""
    return ZCheck(name, hits / n, math.sqrt(target * (1 - target) / n), target, n)


def variance_check(name: str, sample: np.ndarray, target: float) -> ZCheck:
    """Sample variance with its delta-method standard error."""
    x = np.asarray(sample, dtype=float)
    n = len(x)
    m = x.mean()
    c = x - m
    m2 = float(np.mean(c**2))
    m4 = float(np.mean(c**4))
    var = m2 * n / (n - 1)
    se = math.sqrt(max(m4 - m2**2, 0.0) / n)
    return ZCheck(name, var, se, target, n)


def pooled_chisquare(observed: np.ndarray, expected: np.ndarray, min_expected: float = 5.0):
    """Chi-square test after merging adjacent bins until each expects >= 5.

    Returns (statistic, p-value, number of pooled bins)."""
    obs_out, exp_out = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(observed, expected):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            obs_out.append(o_acc)
            exp_out.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        if exp_out:
            obs_out[-1] += o_acc
            exp_out[-1] += e_acc
        else:
            obs_out.append(o_acc)
            exp_out.append(e_acc)
    obs_out, exp_out = np.array(obs_out), np.array(exp_out)
    if len(obs_out) < 2:
        raise ValueError("need at least two bins after pooling")
    stat, p = stats.chisquare(obs_out, exp_out * obs_out.sum() / exp_out.sum())
    return float(stat), float(p), len(obs_out)


def yule_chisquare(sample: np.ndarray, law: YuleLaw):
    """Goodness of fit of integer samples against the geometric law."""
    sample = np.asarray(sample)
    n = len(sample)
    top = int(sample.max())
    support = np.arange(1, top + 1)
    observed = np.bincount(sample, minlength=top + 1)[1:].astype(float)
    expected = n * law.pmf(support)
    expected[-1] += n * law.dist.sf(top)
    return pooled_chisquare(observed, expected)
