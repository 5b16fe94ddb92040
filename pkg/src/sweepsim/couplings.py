"""Companion processes built on the same randomness as the population.

Each companion is driven by the population's recorded event stream
(thinning) plus its own auxiliary Poisson clocks.  None of them feeds back
into the population, so they are evaluated as a pass over a finished
trajectory: within every holding interval the population rates are
constant and the companion's own events are raced against the interval end.

Companions
----------
Y    dominating immigrant-family process, Y_k = X_{k,I_k} + Ybar_k
Z1   dominated process for X_1 on (0, T_1 ^ T^(1)]
Z1'  dominated process for X_1^(1) on (T_1 ^ T^(1), T_{1,alpha} ^ T^(1)]
W0   dominating process for X_0 from T_{1,alpha} ^ T_1'

Individuals in a lineage class (X_{k,I}, X_1^(1)) are tracked by counts
only: a type-k birth or death is attributed to the class with probability
(class size) / X_k, i.e. to a uniformly chosen type-k individual.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from . import _engine as eng
from .model import Parameters, PopulationState, StopCondition, Trajectory, run
from .observables import sweep_width

# flag bits
FLAG_IMMIGRATION = 1   # mhat_1 < m_1
FLAG_BIRTH_GAP = 2     # bhat_k < b_k
FLAG_GAMMA = 4         # birth thinning probability > 1
FLAG_ZETA = 8          # immigration thinning probability > 1
FLAG_BUFFER = 16       # immigrant buffer overflow
FLAG_ETA = 32          # N^(eta-1) log N >= 1, mhat_1 undefined

# Y is no longer simulated above this multiple of N
Y_CAP_FACTOR = 2

FLAG_NAMES = {FLAG_IMMIGRATION: "mhat1<m1", FLAG_BIRTH_GAP: "bhat<b",
              FLAG_GAMMA: "gamma-thinning>1", FLAG_ZETA: "zeta-thinning>1",
              FLAG_BUFFER: "buffer", FLAG_ETA: "eta-factor"}


def describe_flags(flags: int) -> str:
    return ",".join(name for bit, name in FLAG_NAMES.items() if flags & bit)


@dataclass(frozen=True)
class CouplingConstants:
    alpha: float = 0.5
    gamma: float = 0.9
    zeta: float = 0.05
    kappa: float = 0.05

    def __post_init__(self):
        for name in ("alpha", "gamma", "zeta", "kappa"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")


@dataclass
class PairedPath:
    """Lower and upper processes sampled after every population event.

    ``middle`` is used by Z1' (the class X_1^(1) between Z1' and X_1)."""

    name: str
    times: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    flags: int = 0
    middle: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)

    @property
    def flagged(self) -> bool:
        return self.flags != 0


@dataclass
class DominationReport:
    name: str
    events_checked: int
    violations: int
    first_violation_index: Optional[int]
    first_violation_time: Optional[float]
    flagged: bool
    flags: str = ""

    @property
    def ok(self) -> bool:
        return self.violations == 0


def domination_report(path: PairedPath) -> DominationReport:
    """Check lower <= (middle <=) upper at every sampled event."""
    bad = path.lower > path.upper
    if path.middle is not None:
        bad |= (path.lower > path.middle) | (path.middle > path.upper)
    idx = np.flatnonzero(bad)
    first = int(idx[0]) if len(idx) else None
    return DominationReport(path.name, len(path.times), len(idx), first,
                            float(path.times[first]) if first is not None else None,
                            path.flagged, describe_flags(path.flags))


def reports_to_csv(rows: list[tuple[int, DominationReport]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("run", "companion", "events_checked", "violations", "flagged", "flags"))
    for run_id, r in rows:
        w.writerow((run_id, r.name, r.events_checked, r.violations, int(r.flagged), r.flags))
    return buf.getvalue()


# ----------------------------------------------------------------- kernels
# Shared arguments: event columns (times, kinds, src, dst), the initial
# counts (already padded to every type the run reaches), t0, final time,
# N, mu, s.

@njit(cache=True)
def _fitness(counts, w):
    S = 0.0
    for k in range(counts.shape[0]):
        S += w[k] * counts[k]
    return S


@njit(cache=True)
def _y_kernel(times, kinds, src, dst, init, t0, t_final, n_pop, mu, s, k,
              class_end, class_closed, imm_end, mhat_factor, y_cap, rng,
              out_t, out_lo, out_hi, imm_lam):
    """Ybar_k next to the population; returns (flags, n immigrant records,
    lambda_k at imm_end, Ybar births, Ybar deaths, saturation time).

    Once Y_k exceeds ``y_cap`` (> N) its own clocks are no longer run and
    it is reported as y_cap from then on; X_{k,I} <= N keeps it dominated.
    Immigrant arrivals are still recorded up to ``imm_end``."""
    counts = init.copy()
    L = counts.shape[0]
    w = np.empty(L)
    for q in range(L):
        w[q] = (1.0 + s) ** q
    S = _fitness(counts, w)
    wk = w[k]
    xi = 0  # X_{k,I}
    yb = 0  # Ybar
    lam = 0.0
    lam_imm_end = -1.0
    flags = 0
    n_imm = 0
    nb = 0
    nd = 0
    t_sat = -1.0
    E = times.shape[0]
    t = t0
    out_t[0] = t0
    out_lo[0] = xi
    out_hi[0] = xi + yb
    for p in range(E + 1):
        t_end = times[p] if p < E else t_final
        xk = counts[k]
        dk = 1.0 - wk * xk / S + mu
        bk = (n_pop - xk) * wk / S
        bhat = wk * dk
        gap = bhat - bk
        if gap < -1e-12 * bhat:
            flags |= 2
            gap = 0.0
        imm = 0.0
        if k == 1 and t_end <= imm_end:
            imm = mhat_factor * n_pop * mu * dk - counts[0] * mu
            if imm < 0.0:
                flags |= 1
                imm = 0.0
        t_start = t
        while True:
            if t_sat >= 0.0:
                # only the immigrant clock is still needed
                if imm <= 0.0:
                    break
                tn = t + rng.exponential() / imm
                if tn >= t_end:
                    break
                t = tn
                if n_imm < imm_lam.shape[0]:
                    imm_lam[n_imm] = lam + dk * (t - t_start)
                    n_imm += 1
                else:
                    flags |= 16
                continue
            R = imm + yb * bhat + xi * gap + yb * dk
            if R <= 0.0:
                break
            tn = t + rng.exponential() / R
            if tn >= t_end:
                break
            t = tn
            u = rng.random() * R
            if xi + yb >= y_cap:
                t_sat = t
                continue
            if u < imm:
                yb += 1
                if n_imm < imm_lam.shape[0]:
                    imm_lam[n_imm] = lam + dk * (t - t_start)
                    n_imm += 1
                else:
                    flags |= 16
            elif u < imm + yb * bhat + xi * gap:
                yb += 1
                nb += 1
            else:
                yb -= 1
                nd += 1
        lam += dk * (t_end - t_start)
        t = t_end
        if k == 1 and t_end <= imm_end:
            lam_imm_end = lam
        if p == E:
            break
        i = src[p]
        j = dst[p]
        if i == k and xk > 0:
            if rng.random() * xk < xi:
                xi -= 1
        elif j == k:
            if kinds[p] == 1:
                inside = t_end <= class_end if class_closed else t_end < class_end
                if inside:
                    xi += 1
                if k == 1 and t_end <= imm_end:
                    if n_imm < imm_lam.shape[0]:
                        imm_lam[n_imm] = lam
                        n_imm += 1
                    else:
                        flags |= 16
            elif xk > 0 and rng.random() * xk < xi:
                xi += 1
        counts[i] -= 1
        counts[j] += 1
        S += w[j] - w[i]
        if t_sat < 0.0 and xi + yb >= y_cap:
            t_sat = t_end
        out_t[p + 1] = t_end
        out_lo[p + 1] = xi
        out_hi[p + 1] = y_cap if t_sat >= 0.0 else xi + yb
    return flags, n_imm, lam_imm_end, nb, nd, t_sat


@njit(cache=True)
def _z1_kernel(times, kinds, src, dst, init, t0, t_final, n_pop, mu, s,
               gamma, zeta, w_end, z_cap, rng, out_t, out_lo, out_hi, imm_lam):
    """Z1 next to X1.  Returns (flags, n immigrant records, lambda_1 at
    window end, births, deaths, T_Z1).  After the window Z1 runs on its
    own until it exceeds ``z_cap`` (the time T_Z1) or the record ends."""
    counts = init.copy()
    L = counts.shape[0]
    w = np.empty(L)
    for q in range(L):
        w[q] = (1.0 + s) ** q
    S = _fitness(counts, w)
    w1 = w[1]
    z = 0
    lam = 0.0
    lam_end = -1.0
    flags = 0
    n_imm = 0
    nb = 0
    nd = 0
    t_z = -1.0
    E = times.shape[0]
    t = t0
    gs = 1.0 + gamma * s
    out_t[0] = t0
    out_lo[0] = z
    out_hi[0] = counts[1]
    for p in range(E + 1):
        t_end = times[p] if p < E else t_final
        x1 = counts[1]
        d1 = 1.0 - w1 * x1 / S + mu
        b1 = (n_pop - x1) * w1 / S
        in_window = t_end <= w_end
        t_start = t
        if not in_window and t_z < 0.0:
            # autonomous phase, driven only by d_1(t)
            while True:
                R = (gs * z + z + (1.0 - zeta) * n_pop * mu) * d1
                if R <= 0.0:
                    break
                tn = t + rng.exponential() / R
                if tn >= t_end:
                    break
                t = tn
                u = rng.random() * R
                if u < gs * z * d1:
                    z += 1
                    nb += 1
                elif u < (gs * z + z) * d1:
                    z -= 1
                    nd += 1
                else:
                    z += 1
                if z > z_cap:
                    t_z = t
                    break
        lam += d1 * (t_end - t_start)
        t = t_end
        if in_window:
            lam_end = lam
            if z > z_cap and t_z < 0.0:
                t_z = t_end
        if p == E:
            break
        i = src[p]
        j = dst[p]
        if in_window:
            if j == 1 and kinds[p] == 0:
                pb = gs * z * d1 / (x1 * b1)
                if pb > 1.0:
                    flags |= 4
                if rng.random() < pb:
                    z += 1
                    nb += 1
            elif i == 1:
                if rng.random() * x1 < z:
                    z -= 1
                    nd += 1
            elif j == 1 and kinds[p] == 1:
                pi = (1.0 - zeta) * n_pop * d1 / counts[0]
                if pi > 1.0:
                    flags |= 8
                if rng.random() < pi:
                    z += 1
                    if n_imm < imm_lam.shape[0]:
                        imm_lam[n_imm] = lam
                        n_imm += 1
                    else:
                        flags |= 16
        counts[i] -= 1
        counts[j] += 1
        S += w[j] - w[i]
        out_t[p + 1] = t_end
        out_lo[p + 1] = z
        out_hi[p + 1] = counts[1]
    return flags, n_imm, lam_end, nb, nd, t_z


@njit(cache=True)
def _z1p_kernel(times, kinds, src, dst, init, t0, t_final, n_pop, mu, s, gamma,
                p_start, w_end, t0_lam, rng, out_t, out_lo, out_mid, out_hi):
    """Z1' and the class X_1^(1) from position ``p_start`` to ``w_end``.

    Returns (flags, n recorded, Z1' at lambda-time t0_lam or -1 when the
    window ends first, lambda elapsed in the window, Z1' at window end,
    births, deaths)."""
    counts = init.copy()
    L = counts.shape[0]
    w = np.empty(L)
    for q in range(L):
        w[q] = (1.0 + s) ** q
    E = times.shape[0]
    for p in range(p_start):
        counts[src[p]] -= 1
        counts[dst[p]] += 1
    S = _fitness(counts, w)
    w1 = w[1]
    gs = 1.0 + gamma * s
    c = counts[1]
    z = c
    flags = 0
    lam = 0.0
    z_at = -1
    nb = 0
    nd = 0
    t = times[p_start - 1] if p_start > 0 else t0
    n = 0
    out_t[n] = t
    out_lo[n] = z
    out_mid[n] = c
    out_hi[n] = counts[1]
    n += 1
    for p in range(p_start, E + 1):
        t_end = times[p] if p < E else t_final
        if t_end > w_end:
            t_end = w_end
        x1 = counts[1]
        d1 = 1.0 - w1 * x1 / S + mu
        b1 = (n_pop - x1) * w1 / S
        dl = d1 * (t_end - t)
        if z_at < 0 and lam + dl >= t0_lam:
            z_at = z
        lam += dl
        t = t_end
        if p == E or times[p] > w_end:
            break
        i = src[p]
        j = dst[p]
        if j == 1 and kinds[p] == 0:
            if x1 > 0 and rng.random() * x1 < c:
                pb = gs * z * d1 / (c * b1)
                if pb > 1.0:
                    flags |= 4
                c += 1
                if rng.random() < pb:
                    z += 1
                    nb += 1
        elif i == 1:
            if rng.random() * x1 < c:
                if rng.random() * c < z:
                    z -= 1
                    nd += 1
                c -= 1
        counts[i] -= 1
        counts[j] += 1
        S += w[j] - w[i]
        out_t[n] = t_end
        out_lo[n] = z
        out_mid[n] = c
        out_hi[n] = counts[1]
        n += 1
    return flags, n, z_at, lam, z, nb, nd


@njit(cache=True)
def _bp_grow(z, birth, death, horizon, cap, rng):
    """Binary-fission process from z individuals for ``horizon`` time units."""
    t = 0.0
    while z > 0 and z < cap:
        R = z * (birth + death)
        t += rng.exponential() / R
        if t > horizon:
            break
        if rng.random() * (birth + death) < birth:
            z += 1
        else:
            z -= 1
    return z


@njit(cache=True)
def _w0_kernel(times, kinds, src, dst, init, t0, t_final, n_pop, mu, s, alpha,
               p_start, t1_lam, rng, out_t, out_lo, out_hi):
    """W0 = X0 + Wbar0 from position ``p_start`` to the end of the record,
    then autonomously (X0 = 0) until W0 hits 0 or exceeds (1-alpha/2)N.

    Returns (n recorded, outcome, tau, lambda_0 at tau, births, deaths):
    outcome 0 = tau first, 1 = tau' first, 2 = undecided (record ended
    with X0 > 0 and autonomous phase not reached)."""
    counts = init.copy()
    L = counts.shape[0]
    w = np.empty(L)
    for q in range(L):
        w[q] = (1.0 + s) ** q
    E = times.shape[0]
    for p in range(p_start):
        counts[src[p]] -= 1
        counts[dst[p]] += 1
    S = _fitness(counts, w)
    upper_lim = (1.0 - alpha / 2.0) * n_pop
    wb = 0
    lam = 0.0
    nb = 0
    nd = 0
    t = times[p_start - 1] if p_start > 0 else t0
    n = 0
    out_t[n] = t
    out_lo[n] = counts[0]
    out_hi[n] = counts[0] + wb
    n += 1
    tau = -1.0
    tau_lam = -1.0
    outcome = -1
    if counts[0] + wb == 0:
        return n, 0, t, 0.0, nb, nd
    for p in range(p_start, E + 1):
        t_end = times[p] if p < E else t_final
        x0 = counts[0]
        d0 = 1.0 - x0 / S + mu
        b0 = (n_pop - x0) / S
        bh = d0 / (1.0 + s)
        gap = bh - b0
        if gap < 0.0:
            gap = 0.0
        t_start = t
        while True:
            R = wb * bh + x0 * gap + wb * d0
            if R <= 0.0:
                break
            tn = t + rng.exponential() / R
            if tn >= t_end:
                break
            t = tn
            if rng.random() * R < wb * bh + x0 * gap:
                wb += 1
                nb += 1
            else:
                wb -= 1
                nd += 1
            if x0 + wb > upper_lim:
                outcome = 1
                break
            if x0 + wb == 0:
                outcome = 0
                tau = t
                tau_lam = lam + d0 * (t - t_start)
                break
        if outcome >= 0:
            break
        lam += d0 * (t_end - t_start)
        t = t_end
        if p == E:
            break
        i = src[p]
        j = dst[p]
        if i == 0:
            nd += 1
        elif j == 0:
            nb += 1
        counts[i] -= 1
        counts[j] += 1
        S += w[j] - w[i]
        out_t[n] = t_end
        out_lo[n] = counts[0]
        out_hi[n] = counts[0] + wb
        n += 1
        if counts[0] + wb > upper_lim:
            outcome = 1
            break
        if counts[0] + wb == 0:
            outcome = 0
            tau = t_end
            tau_lam = lam
            break
    if outcome < 0:
        if counts[0] > 0:
            return n, 2, -1.0, -1.0, nb, nd
        # X0 is extinct for good: constant rates d0 = 1 + mu
        d0 = 1.0 + mu
        bh = d0 / (1.0 + s)
        while True:
            dt = rng.exponential() / (wb * (bh + d0))
            t += dt
            lam += d0 * dt
            if rng.random() * (bh + d0) < bh:
                wb += 1
                nb += 1
            else:
                wb -= 1
                nd += 1
            if wb > upper_lim:
                outcome = 1
                break
            if wb == 0:
                outcome = 0
                tau = t
                tau_lam = lam
                break
    return n, outcome, tau, tau_lam, nb, nd


# ------------------------------------------------------------------ driver

def _inf(x: float) -> float:
    return math.inf if math.isnan(x) else x


@dataclass
class CoupledRun:
    """One population run to T_1' with every companion evaluated on it."""

    params: Parameters
    consts: CouplingConstants
    trajectory: Trajectory
    times: dict  # named stopping times (inf when never reached)
    paths: dict  # companion name -> PairedPath
    y_immigrants: np.ndarray  # lambda_1 arrival times of Y_1 immigrants on (0, T_1)
    y_exposure: float  # lambda_1(T_1), or -1 when T_1 was not reached
    z_immigrants: np.ndarray  # lambda_1 arrival times of Z_1 immigrants in its window
    z_exposure: float
    z_births: int
    z_deaths: int
    z1p: dict
    w0: dict

    @property
    def event_cap_hit(self) -> bool:
        return self.trajectory.status == "event_cap"


def window_times(traj: Trajectory, params: Parameters) -> dict:
    """Stopping times that delimit the coupling windows."""
    log = traj.online_log
    delta = sweep_width(params.eta)
    t_upper = min([_inf(log.T(k)) for k in range(2, delta + 1)] + [_inf(log.tau_k(delta + 1))])
    T1 = _inf(log.T(1))
    return {"T1": T1, "T_upper": t_upper, "T1_alpha": _inf(log.T_alpha(1)),
            "T1_prime": _inf(log.T_prime(1)), "tau2": _inf(log.tau_k(2)),
            "delta": delta}


def _position(traj: Trajectory, t: float) -> int:
    """Number of events up to and including time t."""
    if t <= traj.t0:
        return 0
    return int(np.searchsorted(traj.times, t, side="right"))


def mhat_factor(params: Parameters) -> float:
    """1 / (1 - N^(eta-1) log N); inf when the denominator is not positive."""
    c = params.N ** (params.eta - 1.0) * params.log_n
    return 1.0 / (1.0 - c) if c < 1 else math.inf


def couple_upper_Y(traj: Trajectory, k: int, rng: np.random.Generator,
                   wt: Optional[dict] = None) -> tuple[PairedPath, np.ndarray, float]:
    """(X_{k,I_k}, Y_{k,I_k}) after every population event, plus the lambda_1
    arrival times of Y_1 immigrants on (0, T_1] and lambda_1(T_1) (k = 1)."""
    p = traj.params
    wt = wt or window_times(traj, p)
    if k < 1:
        raise ValueError("k must be >= 1")
    L = max(traj.n_types + 1, k + 2)
    init = np.zeros(L, dtype=np.int64)
    init[:len(traj.initial_counts)] = traj.initial_counts
    E = len(traj.times)
    out_t = np.empty(E + 1)
    out_lo = np.empty(E + 1, dtype=np.int64)
    out_hi = np.empty(E + 1, dtype=np.int64)
    imm = np.empty(E + 10_000)
    if k == 1:
        class_end, closed, imm_end = wt["T1"], True, wt["T1"]
    else:
        class_end, closed, imm_end = _inf(traj.online_log.tau_k(k)), False, -math.inf
    fac = mhat_factor(p)
    flags0 = 0
    if not math.isfinite(fac):
        flags0 = FLAG_ETA
        fac = 0.0
    flags, n_imm, lam_end, nb, nd, t_sat = _y_kernel(
        traj.times, traj.kinds, traj.src, traj.dst, init, traj.t0, traj.final_time,
        p.N, p.mu, p.s, k, class_end, closed, imm_end, fac, Y_CAP_FACTOR * p.N, rng,
        out_t, out_lo, out_hi, imm)
    path = PairedPath(f"Y{k}", out_t, out_lo, out_hi, flags | flags0,
                      info={"births": nb, "deaths": nd,
                            "saturated_at": t_sat if t_sat >= 0 else math.inf})
    arrivals = np.sort(imm[:n_imm])
    exposure = lam_end if (k == 1 and math.isfinite(wt["T1"])) else -1.0
    return path, arrivals, exposure


def couple_lower_Z1(traj: Trajectory, consts: CouplingConstants, rng: np.random.Generator,
                    wt: Optional[dict] = None):
    """(Z_1, X_1) on (0, T_1 ^ T^(1)] plus immigrant lambda_1 times and
    birth/death counts."""
    p = traj.params
    wt = wt or window_times(traj, p)
    w_end = min(wt["T1"], wt["T_upper"])
    L = max(traj.n_types + 1, 3)
    init = np.zeros(L, dtype=np.int64)
    init[:len(traj.initial_counts)] = traj.initial_counts
    E = len(traj.times)
    out_t = np.empty(E + 1)
    out_lo = np.empty(E + 1, dtype=np.int64)
    out_hi = np.empty(E + 1, dtype=np.int64)
    imm = np.empty(E + 1)
    flags, n_imm, lam_end, nb, nd, t_z = _z1_kernel(
        traj.times, traj.kinds, traj.src, traj.dst, init, traj.t0, traj.final_time,
        p.N, p.mu, p.s, consts.gamma, consts.zeta, w_end, p.establishment_threshold,
        rng, out_t, out_lo, out_hi, imm)
    m = _position(traj, w_end) + 1
    path = PairedPath("Z1", out_t[:m], out_lo[:m], out_hi[:m], flags,
                      info={"window_end": w_end, "births": nb, "deaths": nd,
                            "T_Z1": t_z if t_z >= 0 else math.inf})
    exposure = lam_end if math.isfinite(w_end) else -1.0
    return path, imm[:n_imm].copy(), exposure


def couple_lower_Z1prime(traj: Trajectory, consts: CouplingConstants,
                         rng: np.random.Generator, wt: Optional[dict] = None):
    """(Z_1', X_1^(1), X_1) on [T_1 ^ T^(1), T_{1,alpha} ^ T^(1)].

    Z1' is then continued past the window as a binary-fission process on
    the lambda_1 clock until lambda-time t0 = log(alpha N s)/(gamma s),
    giving the growth sample Z~1'(t0)."""
    p = traj.params
    wt = wt or window_times(traj, p)
    start = min(wt["T1"], wt["T_upper"])
    end = min(wt["T1_alpha"], wt["T_upper"])
    t0_lam = math.log(consts.alpha * p.N * p.s) / (consts.gamma * p.s)
    info = {"start": start, "end": end, "D": wt["T1"] < wt["T_upper"], "t0": t0_lam}
    if not math.isfinite(start):
        return PairedPath("Z1'", np.empty(0), np.empty(0, np.int64), np.empty(0, np.int64),
                          middle=np.empty(0, np.int64), info=info | {"z_t0": -1})
    L = max(traj.n_types + 1, 3)
    init = np.zeros(L, dtype=np.int64)
    init[:len(traj.initial_counts)] = traj.initial_counts
    E = len(traj.times)
    ps = _position(traj, start)
    size = E - ps + 2
    out = [np.empty(size), np.empty(size, np.int64), np.empty(size, np.int64),
           np.empty(size, np.int64)]
    flags, n, z_at, lam, z_end, nb, nd = _z1p_kernel(
        traj.times, traj.kinds, traj.src, traj.dst, init, traj.t0, traj.final_time,
        p.N, p.mu, p.s, consts.gamma, ps, end, t0_lam, rng, *out)
    if z_at < 0:
        z_at = _bp_grow(z_end, 1.0 + consts.gamma * p.s, 1.0, t0_lam - lam,
                        np.iinfo(np.int64).max, rng)
    info |= {"z_start": int(out[1][0]), "z_t0": int(z_at), "lam_window": lam,
             "births": nb, "deaths": nd}
    return PairedPath("Z1'", out[0][:n], out[1][:n], out[3][:n], flags,
                      middle=out[2][:n], info=info)


W0_OUTCOMES = {0: "tau", 1: "tau_prime", 2: "undecided"}


def couple_upper_W0(traj: Trajectory, consts: CouplingConstants, rng: np.random.Generator,
                    wt: Optional[dict] = None):
    """(X_0, W_0) from T_{1,alpha} ^ T_1' to the end of the record; W_0 is
    then continued until tau (W_0 = 0) or tau' (W_0 > (1 - alpha/2) N)."""
    p = traj.params
    wt = wt or window_times(traj, p)
    start = min(wt["T1_alpha"], wt["T1_prime"])
    if not math.isfinite(start):
        return PairedPath("W0", np.empty(0), np.empty(0, np.int64), np.empty(0, np.int64),
                          info={"outcome": "undecided", "start": start})
    L = max(traj.n_types + 1, 3)
    init = np.zeros(L, dtype=np.int64)
    init[:len(traj.initial_counts)] = traj.initial_counts
    E = len(traj.times)
    ps = _position(traj, start)
    size = E - ps + 2
    out = [np.empty(size), np.empty(size, np.int64), np.empty(size, np.int64)]
    t1 = 2 * (1 + p.s) * p.log_n / p.s
    n, outcome, tau, tau_lam, nb, nd = _w0_kernel(
        traj.times, traj.kinds, traj.src, traj.dst, init, traj.t0, traj.final_time,
        p.N, p.mu, p.s, consts.alpha, ps, t1, rng, *out)
    info = {"start": start, "outcome": W0_OUTCOMES[outcome], "tau": tau,
            "lambda0_tau": tau_lam, "t1": t1, "births": nb, "deaths": nd,
            "tau_within_t1": outcome == 0 and tau_lam <= t1}
    return PairedPath("W0", out[0][:n], out[1][:n], out[2][:n], 0, info=info)


@dataclass(frozen=True)
class AuxRates:
    mhat1: float
    bhat_k: float
    bhat0: float


def aux_rates(state: PopulationState, k: int, params: Parameters) -> AuxRates:
    """Companion rates in ``state``: mhat_1 = N mu d_1 / (1 - N^(eta-1) log N),
    bhat_k = (1+s)^k d_k and bhat_0 = d_0 / (1+s)."""
    from .model import per_type_rates

    d1 = per_type_rates(state, 1, params)[2]
    dk = per_type_rates(state, k, params)[2]
    d0 = per_type_rates(state, 0, params)[2]
    return AuxRates(mhat_factor(params) * params.N * params.mu * d1,
                    (1.0 + params.s) ** k * dk, d0 / (1.0 + params.s))


def coupled_run(params: Parameters, consts: CouplingConstants, seed,
                max_events: int = 50_000_000) -> CoupledRun:
    """Population from all type 0 up to T_1', then every companion.

    ``seed`` is anything accepted by numpy.random.SeedSequence; the
    population and each companion get their own spawned stream."""
    if params.eta is None:
        raise ValueError("couplings need eta")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    s_pop, s_y1, s_y2, s_z, s_zp, s_w = ss.spawn(6)
    rng = np.random.Generator(np.random.PCG64(s_pop))
    traj = run(params, PopulationState.monomorphic(params.N),
               StopCondition(until="cleared", type=1, max_events=max_events), rng,
               alpha=consts.alpha)
    wt = window_times(traj, params)
    G = lambda sq: np.random.Generator(np.random.PCG64(sq))
    y1, y_imm, y_exp = couple_upper_Y(traj, 1, G(s_y1), wt)
    y2, _, _ = couple_upper_Y(traj, 2, G(s_y2), wt)
    z1, z_imm, z_exp = couple_lower_Z1(traj, consts, G(s_z), wt)
    z1p = couple_lower_Z1prime(traj, consts, G(s_zp), wt)
    w0 = couple_upper_W0(traj, consts, G(s_w), wt)
    return CoupledRun(params, consts, traj, wt,
                      {"Y1": y1, "Y2": y2, "Z1": z1, "Z1'": z1p, "W0": w0},
                      y_imm, y_exp, z_imm, z_exp, z1.info["births"], z1.info["deaths"],
                      z1p.info, w0.info)


def coupling_regime(N: int, eta: float = 0.5) -> Parameters:
    """Desk-scale parameters for coupling experiments: s = N^(-1/3) and
    mu = s / (N (log N)^2), inside the standing assumptions for eta = 0.5."""
    s = N ** (-1.0 / 3.0)
    mu = s / (N * math.log(N) ** 2)
    return Parameters(N, mu, s, eta)


def concatenated_gaps(arrivals: list[np.ndarray], exposures: list[float]) -> np.ndarray:
    """Inter-arrival gaps of the streams laid end to end.

    Each stream is observed on [0, exposure] where the exposure is a
    stopping time; concatenating them gives a single stream with the same
    law, so the pooled gaps carry no censoring bias apart from the final
    incomplete gap, which is dropped."""
    offset = 0.0
    pts = []
    for a, e in zip(arrivals, exposures):
        if e < 0:
            continue
        pts.append(np.asarray(a)[np.asarray(a) <= e] + offset)
        offset += e
    if not pts:
        return np.empty(0)
    allpts = np.concatenate(pts)
    return np.diff(np.concatenate(([0.0], allpts)))
