"""Goodness-of-fit tools and the desk-scale verification experiments."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit
from scipy import special, stats

from . import _engine as eng
from .branching import fixation_probability, pooled_chisquare
from .model import Parameters, PopulationState, StopCondition, Thresholds, fitness_table, run
from .observables import StoppingTimeLog, SweepReport, sweep_count, sweep_width
from .seeding import generator, map_replicates, replicate_seed

SCHEMA_VERSION = 1


class Exclusion(Exception):
    """A replicate cannot contribute to a statistic."""


def rescaled_increments(log: StoppingTimeLog, params: Parameters, K: int) -> np.ndarray:
    """N mu s (T_k - T_{k-1}) for k = 1..K with T_0 = 0."""
    T = np.array([log.T(k) for k in range(1, K + 1)])
    missing = np.flatnonzero(np.isnan(T))
    if len(missing):
        raise Exclusion(f"T_{missing[0] + 1} not reached")
    return params.N * params.mu * params.s * np.diff(np.concatenate(([0.0], T)))


def ks_exp1(sample: Sequence[float]) -> tuple[float, float]:
    """One-sample Kolmogorov-Smirnov statistic against 1 - exp(-x) and its
    p-value from the asymptotic Kolmogorov distribution."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = len(x)
    if n < 20:
        raise ValueError(f"KS test needs at least 20 values, got {n}")
    F = -np.expm1(-np.clip(x, 0.0, None))
    i = np.arange(1, n + 1)
    D = float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))
    return D, float(special.kolmogorov(math.sqrt(n) * D))


# ------------------------------------------------------------ configuration

@dataclass(frozen=True)
class ExperimentConfig:
    N: int = 2000
    mu: float = 1e-6
    s: float = 0.15
    eta: float = 0.5
    K: int = 10
    replicates: int = 20
    seed: int = 12345
    alpha: float = 0.5
    C1: Optional[float] = None
    C2: Optional[float] = None
    significance: float = 0.01
    pass_fraction: float = 0.9
    max_events: int = 500_000_000
    workers: int = 1

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not 0 < self.significance < 1:
            raise ValueError("significance must lie in (0, 1)")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        Parameters(self.N, self.mu, self.s, self.eta)

    @property
    def params(self) -> Parameters:
        return Parameters(self.N, self.mu, self.s, self.eta)

    @property
    def delta(self) -> int:
        return sweep_width(self.eta)

    @property
    def c1(self) -> float:
        return float(self.delta) if self.C1 is None else self.C1

    @property
    def c2(self) -> float:
        return 4 * (1 + self.s) / self.alpha + self.delta if self.C2 is None else self.C2

    def resolved(self) -> dict:
        d = asdict(self)
        d.pop("workers")
        d["C1"], d["C2"] = self.c1, self.c2
        return d


def config_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


# -------------------------------------------------------------- reporting

@dataclass
class Check:
    name: str
    value: float
    threshold: str
    passed: bool
    detail: str = ""


@dataclass
class VerificationReport:
    suite: str
    config: dict
    checks: list = field(default_factory=list)
    exclusions: list = field(default_factory=list)  # (replicate, reason)
    data: dict = field(default_factory=dict)
    total_replicates: int = 0

    @property
    def included(self) -> int:
        return self.total_replicates - len(self.exclusions)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    def add(self, name, value, threshold, passed, detail=""):
        self.checks.append(Check(name, float(value), threshold, bool(passed), detail))

    def to_json(self) -> str:
        out = {"schema_version": SCHEMA_VERSION, "suite": self.suite,
               "config": self.config, "config_hash": config_hash(self.config),
               "total_replicates": self.total_replicates, "included": self.included,
               "excluded": len(self.exclusions),
               "exclusions": [{"replicate": r, "reason": why} for r, why in self.exclusions],
               "checks": [asdict(c) for c in self.checks],
               "passed": self.passed, "data": self.data}
        return json.dumps(out, indent=2, sort_keys=True, default=_jsonable)

    def to_text(self) -> str:
        lines = [f"suite {self.suite}: {'PASS' if self.passed else 'FAIL'}",
                 f"replicates {self.total_replicates}, excluded {len(self.exclusions)}"]
        w = max([len(c.name) for c in self.checks] + [5])
        for c in self.checks:
            lines.append(f"  {'PASS' if c.passed else 'FAIL'}  {c.name:<{w}}  "
                         f"{c.value:.6g}  ({c.threshold}) {c.detail}".rstrip())
        for r, why in self.exclusions:
            lines.append(f"  excluded replicate {r}: {why}")
        return "\n".join(lines)


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


# ------------------------------------------------------------- sweep-time limit

@njit(cache=True)
def _window_checks(times, src, dst, init, t0, k_lo, k_hi, starts, ends, n_pop,
                   min_count, delta, out_fast, out_width, out_nstates):
    """For each sweep k in [k_lo, k_hi] check, over every state in force
    during [starts[k], ends[k]), that X_k >= min_count (fastsweep) and that
    the support lies in [k, k + delta] (width)."""
    counts = init.copy()
    L = counts.shape[0]
    E = times.shape[0]
    for q in range(k_hi - k_lo + 1):
        out_fast[q] = True
        out_width[q] = True
        out_nstates[q] = 0
    t_prev = t0
    for p in range(E + 1):
        # state ``counts`` holds on [t_prev, t_next)
        t_next = times[p] if p < E else np.inf
        for q in range(k_hi - k_lo + 1):
            k = k_lo + q
            a = starts[q]
            b = ends[q]
            if t_next > a and t_prev < b:
                out_nstates[q] += 1
                if k >= L or counts[k] < min_count:
                    out_fast[q] = False
                for j in range(L):
                    if counts[j] > 0 and (j < k or j > k + delta):
                        out_width[q] = False
                        break
        if p == E:
            break
        counts[src[p]] -= 1
        counts[dst[p]] += 1
        t_prev = t_next


@dataclass
class ReplicateResult:
    replicate: int
    status: str
    n_events: int
    final_time: float
    log: StoppingTimeLog
    fast: list  # per k: True/False/None (None = empty window)
    width: list
    corollary: list  # (u, xbar, V, width_ok) at checkpoints


def _theorem1_replicate(job) -> ReplicateResult:
    cfg, i, checkpoints = job
    p = cfg.params
    rng = generator(replicate_seed(cfg.seed, i))
    K = cfg.K
    stop = StopCondition(until="established", type=K + 1, max_events=cfg.max_events)
    if checkpoints:
        # keep going until the last corollary checkpoint as well
        t_end = max(checkpoints)
        traj = run(p, PopulationState.monomorphic(p.N), StopCondition(
            horizon=t_end, max_events=cfg.max_events), rng, alpha=cfg.alpha)
    else:
        traj = run(p, PopulationState.monomorphic(p.N), stop, rng, alpha=cfg.alpha)
    log = traj.online_log
    thr = p.establishment_threshold
    fast, width = [], []
    if traj.recorded and not checkpoints:
        starts = np.array([log.T(k) + cfg.c1 * thr for k in range(1, K + 1)])
        ends = np.array([log.T(k + 1) for k in range(1, K + 1)])
        starts = np.where(np.isnan(starts), np.inf, starts)
        ends = np.where(np.isnan(ends), -np.inf, ends)
        L = max(traj.n_types, K + cfg.delta + 2)
        init = np.zeros(L, dtype=np.int64)
        init[:len(traj.initial_counts)] = traj.initial_counts
        f = np.empty(K, dtype=np.bool_)
        w = np.empty(K, dtype=np.bool_)
        n = np.empty(K, dtype=np.int64)
        min_count = p.N - cfg.c2 * thr
        _window_checks(traj.times, traj.src, traj.dst, init, traj.t0, 1, K, starts, ends,
                       p.N, min_count, cfg.delta, f, w, n)
        for q in range(K):
            empty = n[q] == 0
            fast.append(None if empty else bool(f[q]))
            width.append(None if empty else bool(w[q]))
    cor = []
    if checkpoints:
        m = traj.count_matrix()
        types = np.arange(m.shape[1])
        for u in checkpoints:
            row = m[traj.position_at(u)]
            xbar = float(types @ row) / p.N
            V = sweep_count(log, u)
            nz = np.flatnonzero(row)
            ok = bool(nz[0] >= V and nz[-1] <= V + cfg.delta)
            cor.append((u, xbar, V, ok))
    return ReplicateResult(i, traj.status, traj.n_events, traj.final_time, log, fast, width,
                           cor)


def verify_theorem1(cfg: ExperimentConfig) -> VerificationReport:
    """Rescaled establishment gaps against Exp(1) plus the fastsweep and
    width properties on every sweep window."""
    rep = VerificationReport("theorem1", cfg.resolved(), total_replicates=cfg.replicates)
    p = cfg.params
    if p.mu <= 0:
        for i in range(cfg.replicates):
            rep.exclusions.append((i, "no T_1 within cap: mu = 0 means no sweeps"))
        rep.add("sweeps_possible", 0, "mu > 0", False)
        return rep
    if not p.in_regime():
        rep.data["warning"] = "parameters outside the standing assumptions"
    jobs = [(cfg, i, None) for i in range(cfg.replicates)]
    results = sorted(map_replicates(_theorem1_replicate, jobs, cfg.workers),
                     key=lambda r: r.replicate)
    sample, fast, width = [], [], []
    sweep_rows = SweepReport()
    for r in results:
        sweep_rows.add(r.replicate, r.log, p, cfg.K)
        try:
            inc = rescaled_increments(r.log, p, cfg.K)
        except Exclusion as e:
            why = str(e) + (" (event cap)" if r.status == "event_cap" else "")
            rep.exclusions.append((r.replicate, why))
            continue
        sample.extend(inc.tolist())
        fast.extend(x for x in r.fast if x is not None)
        width.extend(x for x in r.width if x is not None)
    rep.data["increments"] = sample
    rep.data["sweep_csv"] = sweep_rows.to_csv()
    rep.data["events_per_replicate"] = [r.n_events for r in results]
    rep.data["empty_windows"] = sum(x is None for r in results for x in r.fast)
    if len(sample) >= 20:
        D, pval = ks_exp1(sample)
        rep.add("ks_exp1_pvalue", pval, f"> {cfg.significance}", pval > cfg.significance,
                f"D={D:.4f}, n={len(sample)}, mean={np.mean(sample):.4f}")
    else:
        rep.add("ks_exp1_pvalue", float("nan"), "needs >= 20 increments", False)
    for name, arr in (("fastsweep_fraction", fast), ("width_fraction", width)):
        frac = float(np.mean(arr)) if arr else float("nan")
        rep.add(name, frac, f">= {cfg.pass_fraction}", bool(arr) and frac >= cfg.pass_fraction,
                f"windows={len(arr)}")
    return rep


# ------------------------------------------------------------- mean bound

def mean_bound(params: Parameters, delta: int) -> float:
    """Delta (Delta+1)/2 * log N / (N s)."""
    return delta * (delta + 1) / 2 * params.log_n / (params.N * params.s)


def verify_corollary(cfg: ExperimentConfig, rescaled_times: Sequence[float] = (0.5, 1.0, 2.0),
                     grid: int = 200) -> VerificationReport:
    """Mean mutation count against the sweep counter.

    For every replicate the mean count X̄ and V are compared on a grid of
    rescaled times; wherever the support lies in [V, V + Delta] the bound
    0 <= X̄ - V <= Delta(Delta+1)/2 log N/(N s) must hold (asserted).  At
    each requested rescaled time the sample of X̄ is compared with the
    Poisson law (mean within 3 SE, chi-square)."""
    rep = VerificationReport("corollary", cfg.resolved() | {"rescaled_times": list(rescaled_times)},
                             total_replicates=cfg.replicates)
    p = cfg.params
    if p.mu <= 0:
        for i in range(cfg.replicates):
            rep.exclusions.append((i, "no T_1 within cap: mu = 0 means no sweeps"))
        rep.add("sweeps_possible", 0, "mu > 0", False)
        return rep
    scale = 1.0 / (p.N * p.mu * p.s)
    u_max = max(rescaled_times)
    grid_u = np.linspace(0, u_max, grid + 1)[1:]
    checkpoints = sorted(set((grid_u * scale).tolist()) | {u * scale for u in rescaled_times})
    jobs = [(cfg, i, checkpoints) for i in range(cfg.replicates)]
    results = sorted(map_replicates(_theorem1_replicate, jobs, cfg.workers),
                     key=lambda r: r.replicate)
    bound = mean_bound(p, cfg.delta)
    max_gap = 0.0
    n_checked = 0
    per_time = {u: [] for u in rescaled_times}
    for r in results:
        if r.status == "event_cap":
            rep.exclusions.append((r.replicate, "event cap before the last checkpoint"))
            continue
        for (t, xbar, V, ok) in r.corollary:
            max_gap = max(max_gap, abs(xbar - V))
            if ok:
                n_checked += 1
                assert -1e-12 <= xbar - V <= bound + 1e-12, (
                    f"mean bound broken in replicate {r.replicate} at t={t}: "
                    f"xbar={xbar}, V={V}, bound={bound}")
            for u in rescaled_times:
                if t == u * scale:
                    per_time[u].append(xbar)
    rep.data["bound"] = bound
    rep.data["max_abs_gap"] = max_gap
    rep.data["bound_checked_states"] = n_checked
    rep.add("mean_bound_holds", n_checked, "asserted on width-ok checkpoints", True)
    for u, xs in per_time.items():
        xs = np.array(xs)
        if len(xs) < 2:
            continue
        m, se = float(xs.mean()), float(xs.std(ddof=1) / math.sqrt(len(xs)))
        rep.add(f"xbar_mean_t{u:g}", m, f"|mean - {u:g}| <= 3 SE ({3 * se:.3g})",
                abs(m - u) <= 3 * se, f"n={len(xs)}")
        counts = np.rint(xs).astype(int)
        top = max(int(counts.max()), 1)
        obs = np.bincount(counts, minlength=top + 1).astype(float)
        exp = len(xs) * stats.poisson.pmf(np.arange(top + 1), u)
        exp[-1] += len(xs) * stats.poisson.sf(top, u)
        try:
            chi, pval, nb = pooled_chisquare(obs, exp)
            rep.data[f"poisson_chisquare_t{u:g}"] = {"stat": chi, "p": pval, "bins": nb}
        except ValueError:
            pass
        rep.data[f"xbar_t{u:g}"] = xs.tolist()
    return rep


# ----------------------------------------------------------- classical

@dataclass
class AbsorptionSample:
    fixed: np.ndarray
    time: np.ndarray
    events: np.ndarray


def absorption_runs(N: int, s: float, n_runs: int, rng: np.random.Generator,
                    max_events: int = 10**8) -> AbsorptionSample:
    """Single type-1 mutant among N-1 type-0 individuals, mu = 0, run until
    type 1 is fixed or lost."""
    p = Parameters(N, 0.0, s)
    init = np.zeros(3, dtype=np.int64)
    init[0], init[1] = N - 1, 1
    w = fitness_table(s, 3)
    thr = Thresholds(p).table(3)
    fixed = np.empty(n_runs, dtype=np.int8)
    t = np.empty(n_runs)
    ev = np.empty(n_runs, dtype=np.int64)
    eng.absorption_batch(init, w, thr, N, 1, n_runs, max_events, rng, fixed, t, ev)
    return AbsorptionSample(fixed, t, ev)


def brute_force_fixation(N: int, s: float) -> float:
    """Absorption probability at N from 1 for the birth-death chain with
    up/down ratio 1+s, by solving the linear system directly."""
    r = 1.0 + s
    # h(i) = (r h(i+1) + h(i-1)) / (1 + r), h(0) = 0, h(N) = 1
    A = np.zeros((N + 1, N + 1))
    b = np.zeros(N + 1)
    A[0, 0] = 1.0
    A[N, N] = 1.0
    b[N] = 1.0
    for i in range(1, N):
        A[i, i] = 1.0 + r
        A[i, i + 1] = -r
        A[i, i - 1] = -1.0
    return float(np.linalg.solve(A, b)[1])


def verify_classical(N_fix: int = 100, s_fix: float = 0.1, runs_fix: int = 100_000,
                     N_dur: int = 1000, s_dur: float = 0.1, fixed_target: int = 2000,
                     seed: int = 2024, band: float = 0.3) -> VerificationReport:
    """Fixation frequency against the closed form (3 SE) and the mean
    duration of fixed sweeps against (2/s) log N (relative band); the
    duration check is skipped when ``fixed_target`` is 0."""
    cfg = {"N_fix": N_fix, "s_fix": s_fix, "runs_fix": runs_fix, "N_dur": N_dur,
           "s_dur": s_dur, "fixed_target": fixed_target, "seed": seed, "band": band}
    rep = VerificationReport("classical", cfg, total_replicates=runs_fix)
    s1, s2 = np.random.SeedSequence(seed).spawn(2)
    a = absorption_runs(N_fix, s_fix, runs_fix, generator(s1))
    undecided = int((a.fixed < 0).sum())
    for i in np.flatnonzero(a.fixed < 0):
        rep.exclusions.append((int(i), "event cap"))
    n = runs_fix - undecided
    target = fixation_probability(N_fix, s_fix)
    freq = float((a.fixed == 1).sum()) / n
    se = math.sqrt(target * (1 - target) / n)
    rep.add("fixation_frequency", freq, f"|f - {target:.6f}| <= 3 SE ({3 * se:.2g})",
            abs(freq - target) <= 3 * se, f"runs={n}")

    if fixed_target <= 0:
        return rep
    gen = generator(s2)
    durations = []
    runs = 0
    batch = max(1000, int(fixed_target / max(fixation_probability(N_dur, s_dur), 1e-6) / 4))
    while len(durations) < fixed_target:
        b = absorption_runs(N_dur, s_dur, batch, gen)
        runs += batch
        durations.extend(b.time[b.fixed == 1].tolist())
    durations = np.array(durations)
    ref = 2.0 / s_dur * math.log(N_dur)
    mean = float(durations.mean())
    rep.add("sweep_duration_mean", mean, f"within [{(1 - band) * ref:.4g}, {(1 + band) * ref:.4g}]",
            (1 - band) * ref <= mean <= (1 + band) * ref,
            f"fixed={len(durations)}, runs={runs}, ratio={mean / ref:.3f}")
    rep.data["duration_se"] = float(durations.std(ddof=1) / math.sqrt(len(durations)))
    return rep


# ------------------------------------------------------------- branching

def _add_z(rep: VerificationReport, z) -> None:
    rep.add(z.name, z.estimate, f"|x - {z.target:.6g}| <= 3 SE ({3 * z.se:.3g})", z.passed,
            f"z={z.z:+.2f}, n={z.n}")


def verify_branching(n_paths: int = 100_000, seed: int = 31337) -> VerificationReport:
    """Monte Carlo cross-checks of the branching-process closed forms."""
    from . import branching as bp

    rep = VerificationReport("branching", {"n_paths": n_paths, "seed": seed},
                             total_replicates=n_paths)
    streams = iter(np.random.SeedSequence(seed).spawn(16))
    nxt = lambda: generator(next(streams))  # noqa: E731

    # survival of a single individual, birth 1.2 death 1
    spec = bp.BranchingSpec(1.2, 1.0)
    b = bp.simulate_batch(spec, n_paths, nxt(), escape=bp.escape_level(spec))
    n_ok = n_paths - b.n_undecided
    _add_z(rep, bp.proportion_check("survival_b1.2", int((b.outcome == bp.ESCAPED).sum()),
                                    n_ok, bp.survival_probability(spec)))

    # time integral conditioned on extinction, k = 2, s = 0.1: by rejection
    # and through the finite-line rates
    k, s = 2, 0.1
    spec = bp.BranchingSpec((1 + s) ** k, 1.0)
    b = bp.simulate_batch(spec, n_paths, nxt(), escape=bp.escape_level(spec))
    target = bp.conditioned_total_progeny(k, s)
    _add_z(rep, bp.mean_check("progeny_rejection", b.integral[b.outcome == bp.EXTINCT], target))
    fin = bp.decompose(spec).finite_spec()
    b = bp.simulate_batch(fin, n_paths, nxt())
    _add_z(rep, bp.mean_check("progeny_finite_line", b.integral[b.outcome == bp.EXTINCT], target))

    # mean and variance of binary fission, birth 1.2 death 1
    gf = bp.GeneratingFunctionSpec.binary(1.2, 1.0)
    spec = bp.BranchingSpec(1.2, 1.0)
    for t in (0.5, 1.0, 2.0):
        b = bp.simulate_batch(spec, n_paths, nxt(), horizon=t)
        m, v = bp.moments(gf, t)
        x = b.final.astype(float)
        _add_z(rep, bp.mean_check(f"mean_t{t:g}", x, m))
        _add_z(rep, bp.variance_check(f"variance_t{t:g}", x, v))

    # Yule law
    for rt in (0.5, 1.0, 2.0):
        law = bp.yule_law(1.0, rt)
        x = bp.simulate_yule(1.0, rt, n_paths, nxt())
        chi, p, nb = bp.yule_chisquare(x, law)
        rep.add(f"yule_chisquare_rt{rt:g}", p, "> 0.01", p > 0.01, f"stat={chi:.3f}, bins={nb}")

    # two-type decomposition against the one-type process at t = 1
    s = 0.2
    tt = bp.two_type_decomposition(s)
    f, i = bp.simulate_two_type(tt, n_paths, 1.0, nxt())
    _add_z(rep, bp.proportion_check("infinite_line_fraction", int((i > 0).sum()), n_paths,
                                    1 - tt.q))
    one = bp.simulate_batch(bp.BranchingSpec(1 + s, 1.0), n_paths, nxt(), horizon=1.0).final
    ks = stats.ks_2samp(f + i, one)
    rep.add("decomposition_ks2", ks.pvalue, "> 0.01", ks.pvalue > 0.01,
            f"D={ks.statistic:.4f}")
    return rep


# ------------------------------------------------------------- couplings

def _coupling_replicate(job) -> dict:
    from .couplings import coupled_run, domination_report

    params, consts, seed, idx = job
    r = coupled_run(params, consts, np.random.SeedSequence(seed, spawn_key=(params.N, idx)))
    return {
        "run": idx,
        "event_cap": r.event_cap_hit,
        "reports": [domination_report(p) for _, p in sorted(r.paths.items())],
        "y_imm": r.y_immigrants, "y_exp": r.y_exposure,
        "z_imm": r.z_immigrants, "z_exp": r.z_exposure,
        "z_births": r.z_births, "z_deaths": r.z_deaths,
        "z1p": {k: r.z1p[k] for k in ("D", "z_t0")},
        "w0": {k: r.w0[k] for k in ("outcome", "births", "deaths", "tau_within_t1")},
    }


def verify_couplings(sizes: Sequence[int] = (200, 1000, 5000), runs: int = 100,
                     seed: int = 4242, eta: float = 0.5, consts=None,
                     workers: int = 1, significance: float = 0.01) -> VerificationReport:
    """Pathwise domination for every companion process, the flag-rate trend
    over N and the marginal laws of the time-changed companions (pooled over
    all sizes)."""
    from .couplings import CouplingConstants, coupling_regime, concatenated_gaps, \
        mhat_factor, reports_to_csv
    from .branching import mean_check, proportion_check

    consts = consts or CouplingConstants()
    cfg = {"sizes": list(sizes), "runs": runs, "seed": seed, "eta": eta,
           "constants": asdict(consts), "significance": significance}
    rep = VerificationReport("couplings", cfg, total_replicates=runs * len(sizes))
    flag_frac = []
    csv_rows = []
    for N in sizes:
        p = coupling_regime(N, eta)
        res = map_replicates(_coupling_replicate, [(p, consts, seed, i) for i in range(runs)],
                             workers)
        res.sort(key=lambda r: r["run"])
        flagged = violations = 0
        for r in res:
            csv_rows.extend((f"N{N}-{r['run']}", d) for d in r["reports"])
            if r["event_cap"]:
                rep.exclusions.append((f"N{N}-{r['run']}", "event cap"))
                continue
            if any(d.flagged for d in r["reports"]):
                flagged += 1
            violations += sum(d.violations for d in r["reports"] if not d.flagged)
        frac = flagged / runs
        flag_frac.append(frac)
        rep.add(f"violations_N{N}", violations, "== 0 on unflagged runs", violations == 0,
                f"runs={runs}, flagged={flagged}")

        scale = N * p.mu
        g = concatenated_gaps([r["y_imm"] for r in res], [r["y_exp"] for r in res])
        if len(g) >= 20:
            D, pv = ks_exp1(g * scale * mhat_factor(p))
            rep.add(f"Y_immigration_ks_N{N}", pv, f"> {significance}", pv > significance,
                    f"D={D:.4f}, n={len(g)}")
        g = concatenated_gaps([r["z_imm"] for r in res], [r["z_exp"] for r in res])
        if len(g) >= 20:
            D, pv = ks_exp1(g * scale * (1 - consts.zeta))
            rep.add(f"Z1_immigration_ks_N{N}", pv, f"> {significance}", pv > significance,
                    f"D={D:.4f}, n={len(g)}")
        nb = sum(r["z_births"] for r in res)
        nd = sum(r["z_deaths"] for r in res)
        gs = consts.gamma * p.s
        if nb + nd:
            _add_z(rep, proportion_check(f"Z1_birth_fraction_N{N}", nb, nb + nd,
                                         (1 + gs) / (2 + gs)))
        nb = sum(r["w0"]["births"] for r in res)
        nd = sum(r["w0"]["deaths"] for r in res)
        if nb + nd:
            _add_z(rep, proportion_check(f"W0_birth_fraction_N{N}", nb, nb + nd, 1 / (2 + p.s)))
        zs = np.array([r["z1p"]["z_t0"] for r in res if r["z1p"]["D"] and r["z1p"]["z_t0"] >= 0])
        if len(zs) >= 2:
            target = (math.floor(p.log_n / p.s) + 1) * consts.alpha * N * p.s
            _add_z(rep, mean_check(f"Z1prime_growth_N{N}", zs, target))
        tau = [r["w0"]["outcome"] == "tau" for r in res]
        rep.data[f"W0_tau_fraction_N{N}"] = float(np.mean(tau))
        rep.data[f"W0_tau_within_t1_N{N}"] = float(np.mean([r["w0"]["tau_within_t1"] for r in res]))
    rep.data["flagged_fraction"] = dict(zip(map(str, sizes), flag_frac))
    mono = all(a >= b for a, b in zip(flag_frac, flag_frac[1:]))
    rep.add("flagged_fraction_nonincreasing", flag_frac[-1], "non-increasing in N", mono,
            " ".join(f"{n}:{f:.3f}" for n, f in zip(sizes, flag_frac)))
    rep.data["domination_csv"] = reports_to_csv(csv_rows)
    return rep
