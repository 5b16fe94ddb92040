"""Stopping times, counters and derived constants extracted from trajectories."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .model import Parameters, PopulationState, Thresholds, Trajectory


@dataclass(frozen=True)
class DerivedConstants:
    delta: int
    theta: float
    beta: tuple  # beta[0] is beta_1

    def beta_k(self, k: int) -> float:
        return self.beta[k - 1]


def sweep_width(eta: float) -> int:
    """Delta = floor(1/(1-eta)) + 1."""
    if eta is None or not 0 < eta < 1:
        raise ValueError(f"eta must lie in (0, 1), got {eta!r}")
    return math.floor(1.0 / (1.0 - eta)) + 1


def derived_constants(params: Parameters) -> DerivedConstants:
    delta = sweep_width(params.eta)
    if params.s <= 0 or params.mu <= 0:
        raise ValueError("derived constants need s > 0 and mu > 0")
    theta = max(params.N * params.mu, 1.0 / (params.N * params.s))
    th = Thresholds(params)
    return DerivedConstants(delta, theta, tuple(th.beta(k) for k in range(1, delta + 1)))


@dataclass
class StoppingTimeLog:
    """Per-type stopping times; NaN means "not yet".

    established  T_k      X_k first > log N / s
    cleared      T_k'     first t >= T_{k-1}' with X_{k-1} = 0 (T_0' = t0)
    alpha        T_{k,a}  X_k first > alpha N
    star         T_k^*    X_k first > beta_{k-1}
    tau          tau_k    M_k first > beta_{k-1} / sqrt(log N)
    mutations    M_k at the end of the record
    """

    established: np.ndarray
    cleared: np.ndarray
    alpha: np.ndarray
    star: np.ndarray
    tau: np.ndarray
    mutations: np.ndarray

    FIELDS = ("established", "cleared", "alpha", "star", "tau")

    @property
    def n_types(self) -> int:
        return len(self.established)

    def _get(self, arr, k):
        return float(arr[k]) if 0 <= k < len(arr) else math.nan

    def T(self, k: int) -> float:
        return self._get(self.established, k)

    def T_prime(self, k: int) -> float:
        return self._get(self.cleared, k)

    def T_alpha(self, k: int) -> float:
        return self._get(self.alpha, k)

    def T_star(self, k: int) -> float:
        return self._get(self.star, k)

    def tau_k(self, k: int) -> float:
        return self._get(self.tau, k)

    def resized(self, L: int) -> "StoppingTimeLog":
        def fit(a, fill):
            out = np.full(L, fill, dtype=a.dtype)
            n = min(L, len(a))
            out[:n] = a[:n]
            return out
        return StoppingTimeLog(*(fit(getattr(self, f), np.nan) for f in self.FIELDS),
                               mutations=fit(self.mutations, 0))

    def equals(self, other: "StoppingTimeLog") -> bool:
        L = max(self.n_types, other.n_types)
        a, b = self.resized(L), other.resized(L)
        for f in self.FIELDS:
            if not np.array_equal(getattr(a, f), getattr(b, f), equal_nan=True):
                return False
        return np.array_equal(a.mutations, b.mutations)


def _first_after(times: np.ndarray, mask: np.ndarray, t0: float) -> float:
    """Time at which ``mask`` (indexed by position) first holds."""
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        return math.nan
    p = idx[0]
    return t0 if p == 0 else float(times[p - 1])


def detect_stopping_times(traj: Trajectory, alpha: float | None = None) -> StoppingTimeLog:
    """Offline extraction of every stopping time from a recorded trajectory.

    Each time is that of the first event after which the defining predicate
    holds (or the start time if it already holds initially)."""
    alpha = traj.alpha if alpha is None else alpha
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    p = traj.params
    m = traj.count_matrix()
    times = traj.times
    t0 = traj.t0
    L = m.shape[1]
    thr = Thresholds(p, alpha).table(L)
    est = np.full(L, np.nan)
    alp = np.full(L, np.nan)
    star = np.full(L, np.nan)
    tau = np.full(L, np.nan)
    cleared = np.full(L, np.nan)

    # M_k over positions: initial count plus cumulative mutations into k
    init = m[0]
    mut = np.zeros_like(m)
    is_mut = traj.kinds == 1
    rows = np.flatnonzero(is_mut) + 1
    np.add.at(mut, (rows, traj.dst[is_mut]), 1)
    np.cumsum(mut, axis=0, out=mut)
    mcount = mut + init

    for k in range(L):
        col = m[:, k]
        est[k] = _first_after(times, col > thr[0, k], t0)
        alp[k] = _first_after(times, col > thr[1, k], t0)
        star[k] = _first_after(times, col > thr[2, k], t0)
        tau[k] = _first_after(times, mcount[:, k] > thr[3, k], t0)

    cleared[0] = t0
    pos_times = traj.position_times
    for k in range(1, L):
        prev = cleared[k - 1]
        if math.isnan(prev):
            break
        start = int(np.searchsorted(pos_times, prev, side="left"))
        # the state in force at time prev is at position start (or start-1
        # when prev falls strictly inside a holding interval)
        if start >= len(pos_times) or pos_times[start] != prev:
            start -= 1
        idx = np.flatnonzero(m[start:, k - 1] == 0)
        if len(idx) == 0:
            break
        q = start + int(idx[0])
        cleared[k] = max(prev, float(pos_times[q]))
    return StoppingTimeLog(est, cleared, alp, star, tau, mcount[-1].copy())


def mean_mutation_count(state: PopulationState | np.ndarray) -> float:
    """(1/N) sum_k k X_k."""
    counts = state.counts if isinstance(state, PopulationState) else np.asarray(state)
    n = counts.sum()
    return float(np.dot(np.arange(len(counts)), counts) / n)


def sweep_count(log: StoppingTimeLog, u: float) -> int:
    """V(u) = sup{k >= 1 : T_k <= u}, or 0."""
    est = log.established
    ok = np.flatnonzero(~np.isnan(est[1:]) & (est[1:] <= u))
    return int(ok[-1] + 1) if len(ok) else 0


def width_profile(traj: Trajectory, checkpoints: Iterable[float]) -> list[tuple[int, int]]:
    """(min occupied type, max occupied type) in force at each checkpoint."""
    m = traj.count_matrix()
    out = []
    for t in checkpoints:
        row = m[traj.position_at(t)]
        nz = np.flatnonzero(row)
        out.append((int(nz[0]), int(nz[-1])))
    return out


def support_series(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Min and max occupied type after every event."""
    m = traj.count_matrix() > 0
    lo = np.argmax(m, axis=1)
    hi = m.shape[1] - 1 - np.argmax(m[:, ::-1], axis=1)
    return lo, hi


@dataclass
class SweepReport:
    """Per-sweep observables for a set of replicates."""

    rows: list = field(default_factory=list)

    HEADER = ("replicate", "k", "T_k", "T_k_prime", "T_k_alpha", "tau_k", "rescaled_increment")

    def add(self, replicate: int, log: StoppingTimeLog, params: Parameters, K: int):
        scale = params.N * params.mu * params.s
        prev = 0.0
        for k in range(1, K + 1):
            tk = log.T(k)
            inc = scale * (tk - prev) if not math.isnan(prev) else math.nan
            self.rows.append((replicate, k, tk, log.T_prime(k), log.T_alpha(k),
                              log.tau_k(k), inc))
            prev = tk

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.HEADER)
        for r in sorted(self.rows, key=lambda r: (r[0], r[1])):
            w.writerow([r[0], r[1]] + [_fmt(x) for x in r[2:]])
        return buf.getvalue()


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))
