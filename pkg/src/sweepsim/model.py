"""Population model: parameters, state, rates and the exact simulator.

The population has fixed size N.  A type-k individual carries k beneficial
mutations and has fitness (1+s)**k.  Every individual dies at rate 1 and is
replaced by the offspring of a parent drawn proportionally to fitness; each
individual also mutates k -> k+1 at rate mu.  Only events that change the
composition are simulated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from . import _engine as eng

STATUS_NAMES = {
    eng.ST_HORIZON: "horizon",
    eng.ST_CONDITION: "condition",
    eng.ST_ABSORBED: "absorbed",
    eng.ST_EVENT_CAP: "event_cap",
    eng.ST_INVARIANT: "invariant_violation",
}


class Absorbed(Exception):
    """No composition-changing event can happen any more."""


@dataclass(frozen=True)
class Parameters:
    """Model constants.  ``eta`` is only needed by derived constants."""

    N: int
    mu: float
    s: float
    eta: Optional[float] = None

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise ValueError(f"N must be an integer >= 2, got {self.N!r}")
        if not self.mu >= 0:
            raise ValueError(f"mu must be >= 0, got {self.mu!r}")
        if not self.s >= 0:
            raise ValueError(f"s must be >= 0, got {self.s!r}")
        if self.eta is not None and not 0 < self.eta < 1:
            raise ValueError(f"eta must lie in (0, 1), got {self.eta!r}")
        object.__setattr__(self, "N", int(self.N))

    @property
    def log_n(self) -> float:
        return math.log(self.N)

    @property
    def establishment_threshold(self) -> float:
        """log N / s; the count type k must strictly exceed at T_k."""
        return self.log_n / self.s if self.s > 0 else math.inf

    def in_regime(self) -> bool:
        """True when mu < 1/(N log N) and s > N**(-eta).

        Runs with mu = 0, s = 0 or no eta are reported out of regime but
        are still simulated."""
        if self.eta is None or self.mu <= 0 or self.s <= 0:
            return False
        return self.mu < 1.0 / (self.N * self.log_n) and self.s > self.N ** (-self.eta)

    def to_dict(self) -> dict:
        return {"N": self.N, "mu": self.mu, "s": self.s, "eta": self.eta}

    @classmethod
    def from_dict(cls, d: dict) -> "Parameters":
        return cls(N=int(d["N"]), mu=float(d["mu"]), s=float(d["s"]),
                   eta=None if d.get("eta") is None else float(d["eta"]))


def fitness_table(s: float, size: int) -> np.ndarray:
    """(1+s)**k for k = 0..size-1."""
    return np.power(1.0 + s, np.arange(size, dtype=np.float64))


@dataclass
class PopulationState:
    counts: np.ndarray
    time: float = 0.0
    total_fitness: float = float("nan")

    @classmethod
    def from_counts(cls, counts: Sequence[int] | dict, s: float, time: float = 0.0):
        """Build a state from a list indexed by type or a {type: count} map."""
        if isinstance(counts, dict):
            size = max(counts) + 1 if counts else 1
            arr = np.zeros(size, dtype=np.int64)
            for k, x in counts.items():
                arr[k] = x
        else:
            arr = np.asarray(counts, dtype=np.int64).copy()
        if (arr < 0).any():
            raise ValueError("counts must be non-negative")
        st = cls(arr, float(time))
        st.total_fitness = st.recomputed_fitness(s)
        return st

    @classmethod
    def monomorphic(cls, N: int, k: int = 0, s: float = 0.0):
        return cls.from_counts({k: N}, s)

    @property
    def size(self) -> int:
        return int(self.counts.sum())

    def recomputed_fitness(self, s: float) -> float:
        return total_fitness(self, s)

    def count(self, k: int) -> int:
        return int(self.counts[k]) if 0 <= k < len(self.counts) else 0

    def support(self) -> tuple[int, int]:
        nz = np.flatnonzero(self.counts)
        return int(nz[0]), int(nz[-1])

    def copy(self) -> "PopulationState":
        return PopulationState(self.counts.copy(), self.time, self.total_fitness)


@dataclass(frozen=True)
class Event:
    kind: str  # "repl" or "mut"
    i: int  # type losing an individual
    j: int  # type gaining an individual
    time: float

    def __post_init__(self):
        if self.kind not in ("repl", "mut"):
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.i == self.j:
            raise ValueError("self-replacements are not events")
        if self.kind == "mut" and self.j != self.i + 1:
            raise ValueError("a mutation moves type i to i+1")


def total_fitness(state: PopulationState, s: float) -> float:
    counts = state.counts
    return float(np.dot(fitness_table(s, len(counts)), counts))


def replacement_rate(state: PopulationState, i: int, j: int, params: Parameters) -> float:
    """Rate at which X_i drops by one and X_j rises by one."""
    if i == j:
        raise ValueError("i == j does not change the composition")
    S = state.total_fitness
    xi, xj = state.count(i), state.count(j)
    rate = xi * (1.0 + params.s) ** j * xj / S
    if j == i + 1:
        rate += xi * params.mu
    return rate


def per_type_rates(state: PopulationState, k: int, params: Parameters) -> tuple[float, float, float]:
    """(immigration m_k, per-capita birth b_k, per-capita death d_k)."""
    S = state.total_fitness
    wk = (1.0 + params.s) ** k
    xk = state.count(k)
    m = state.count(k - 1) * params.mu if k >= 1 else 0.0
    b = (params.N - xk) * wk / S
    d = (1.0 - wk * xk / S) + params.mu
    return m, b, d


def _window(counts: np.ndarray) -> tuple[int, int]:
    nz = np.flatnonzero(counts)
    return int(nz[0]), int(nz[-1])


def sample_next_event(state: PopulationState, params: Parameters,
                      rng: np.random.Generator) -> tuple[float, Event]:
    """Draw the holding time and the next composition-changing event.

    Reference implementation with the same draw order as the compiled loop
    (one exponential, then one uniform)."""
    counts = state.counts
    if counts[-1] > 0:
        counts = np.append(counts, 0)
    w = fitness_table(params.s, len(counts))
    lo, hi = _window(counts)
    S = state.total_fitness
    rep, mut = eng.total_rates(counts, w, lo, hi, S, params.N, params.mu)
    if rep + mut <= 0:
        raise Absorbed("total event rate is zero")
    dt = rng.exponential() / (rep + mut)
    kind, i, j = eng.select_event(counts, w, lo, hi, S, params.N, params.mu, rep, mut,
                                  rng.random())
    name = "mut" if kind == eng.KIND_MUT else "repl"
    return dt, Event(name, int(i), int(j), state.time + dt)


def apply_event(state: PopulationState, ev: Event, s: float) -> None:
    """Apply an event in place, keeping the fitness cache up to date."""
    if ev.j >= len(state.counts):
        state.counts = np.append(state.counts, np.zeros(ev.j + 1 - len(state.counts), np.int64))
    state.counts[ev.i] -= 1
    state.counts[ev.j] += 1
    state.total_fitness += (1.0 + s) ** ev.j - (1.0 + s) ** ev.i
    state.time = ev.time


@dataclass(frozen=True)
class StopCondition:
    """When :func:`run` stops.

    ``until`` selects a built-in predicate evaluated after every event:
    ``"established"`` (T_k known), ``"cleared"`` (T_k' known), ``"alpha"``
    (T_{k,alpha} known) or ``"fixed_or_lost"`` (X_k is 0 or N).  A Python
    ``predicate`` on the state is also accepted; it is exact but runs the
    chain one event per call.
    """

    horizon: float = math.inf
    max_events: int = 10**10
    until: Optional[str] = None
    type: int = 1
    predicate: Optional[Callable[[PopulationState], bool]] = None

    _CODES = {None: eng.STOP_NONE, "established": eng.STOP_ESTABLISHED,
              "cleared": eng.STOP_CLEARED, "alpha": eng.STOP_ALPHA,
              "fixed_or_lost": eng.STOP_FIXED_OR_LOST}

    def __post_init__(self):
        if self.until not in self._CODES:
            raise ValueError(f"unknown stop predicate {self.until!r}")

    @property
    def code(self) -> int:
        return self._CODES[self.until]


@dataclass
class Thresholds:
    """Per-type levels used by the online stopping-time trackers."""

    params: Parameters
    alpha: float = 0.5

    def beta(self, k: int) -> float:
        """beta_k = theta^(1/2) mu^(k-1) (log N)^(2k-1) / s^k."""
        p = self.params
        if p.s <= 0 or k < 1:
            return math.inf
        if p.mu == 0 and k > 1:
            return 0.0
        theta = max(p.N * p.mu, 1.0 / (p.N * p.s))
        logb = (0.5 * math.log(theta) + ((k - 1) * math.log(p.mu) if k > 1 else 0.0)
                + (2 * k - 1) * math.log(p.log_n) - k * math.log(p.s))
        return math.exp(logb) if logb < 700 else math.inf

    def table(self, cap: int) -> np.ndarray:
        thr = np.full((4, cap), np.inf)
        thr[eng.TRK_EST, :] = self.params.establishment_threshold
        thr[eng.TRK_ALPHA, :] = self.alpha * self.params.N
        for k in range(2, cap):
            b = self.beta(k - 1)
            thr[eng.TRK_STAR, k] = b
            thr[eng.TRK_TAU, k] = b / math.sqrt(self.params.log_n)
        return thr


@dataclass
class Trajectory:
    """Initial state plus the ordered list of composition-changing events.

    Events are stored column-wise: ``times``, ``kinds`` (0 replacement,
    1 mutation), ``src`` (type losing one) and ``dst`` (type gaining one).
    ``times`` etc. are ``None`` when the run was not recorded.
    """

    params: Parameters
    initial_counts: np.ndarray
    t0: float
    times: Optional[np.ndarray]
    kinds: Optional[np.ndarray]
    src: Optional[np.ndarray]
    dst: Optional[np.ndarray]
    final_time: float
    status: str
    n_events: int
    final_counts: np.ndarray
    online_log: object = None
    alpha: float = 0.5
    max_fitness_drift: float = 0.0
    coherence_checks: int = 0
    _matrix: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def recorded(self) -> bool:
        return self.times is not None

    def _need_events(self):
        if not self.recorded:
            raise ValueError("trajectory was run without event recording")

    @property
    def events(self) -> Iterator[Event]:
        self._need_events()
        for t, k, i, j in zip(self.times, self.kinds, self.src, self.dst):
            yield Event("mut" if k == eng.KIND_MUT else "repl", int(i), int(j), float(t))

    @property
    def n_types(self) -> int:
        """Number of type slots needed to describe the whole run."""
        top = len(np.trim_zeros(self.initial_counts, "b"))
        if self.recorded and len(self.dst):
            top = max(top, int(self.dst.max()) + 1)
        return max(top, len(np.trim_zeros(self.final_counts, "b")), 1)

    @property
    def position_times(self) -> np.ndarray:
        """Start time of the state after 0, 1, ..., E events."""
        self._need_events()
        return np.concatenate(([self.t0], self.times))

    def holding_ends(self) -> np.ndarray:
        return np.concatenate((self.times, [self.final_time]))

    def count_matrix(self) -> np.ndarray:
        """Counts after each event: row p is the state after p events."""
        self._need_events()
        if self._matrix is None:
            L = self.n_types
            E = len(self.times)
            m = np.zeros((E + 1, L), dtype=np.int64)
            init = np.zeros(L, dtype=np.int64)
            n0 = min(L, len(self.initial_counts))
            init[:n0] = self.initial_counts[:n0]
            rows = np.arange(1, E + 1)
            np.add.at(m, (rows, self.dst), 1)
            np.add.at(m, (rows, self.src), -1)
            m[0] = init
            np.cumsum(m, axis=0, out=m)
            self._matrix = m
        return self._matrix

    def count_series(self, k: int) -> np.ndarray:
        m = self.count_matrix()
        if k >= m.shape[1] or k < 0:
            return np.zeros(m.shape[0], dtype=np.int64)
        return m[:, k]

    def fitness_series(self) -> np.ndarray:
        m = self.count_matrix()
        return m @ fitness_table(self.params.s, m.shape[1])

    def position_at(self, t: float) -> int:
        """Index of the state holding at time t (events at t included)."""
        self._need_events()
        if t < self.t0 or t > self.final_time:
            raise ValueError(f"time {t} outside [{self.t0}, {self.final_time}]")
        return int(np.searchsorted(self.times, t, side="right"))

    def state_at(self, t: float) -> PopulationState:
        p = self.position_at(t)
        st = PopulationState.from_counts(self.count_matrix()[p], self.params.s,
                                         time=self.position_times[p])
        return st

    def replay(self) -> Iterator[PopulationState]:
        """Yield the initial state, then the state after each event.

        The yielded object is updated in place; copy it to keep it."""
        self._need_events()
        st = PopulationState.from_counts(self.initial_counts, self.params.s, self.t0)
        yield st
        for ev in self.events:
            apply_event(st, ev, self.params.s)
            yield st

    def final_state(self) -> PopulationState:
        return PopulationState.from_counts(self.final_counts, self.params.s, self.final_time)


class _Sim:
    """Array bundle driving the compiled loop; grows on demand."""

    def __init__(self, params: Parameters, initial: PopulationState, alpha: float,
                 record: bool, debug: bool):
        if initial.size != params.N:
            raise ValueError(f"initial state has {initial.size} individuals, N={params.N}")
        self.params = params
        self.record = record
        self.debug = debug
        self.thresholds = Thresholds(params, alpha)
        top = len(np.trim_zeros(initial.counts, "b"))
        cap = max(16, top + 8)
        self.counts = np.zeros(cap, dtype=np.int64)
        self.counts[:top] = initial.counts[:top]
        self.w = fitness_table(params.s, cap)
        self.thr = self.thresholds.table(cap)
        self.trk = np.full((5, cap), np.nan)
        self.mcount = np.zeros(cap, dtype=np.int64)
        lo, hi = _window(self.counts)
        self.istate = np.zeros(6, dtype=np.int64)
        self.istate[eng.I_LO] = lo
        self.istate[eng.I_HI] = hi
        self.fstate = np.zeros(5)
        self.fstate[eng.F_T] = initial.time
        self.fstate[eng.F_S] = float(np.dot(self.w, self.counts))
        self.fstate[eng.F_Q] = float(np.dot(self.w, self.counts * self.counts))
        self.istate[eng.I_NEXT] = eng.init_trackers(self.counts, self.trk, self.mcount,
                                                    self.thr, initial.time)
        bufsize = 4096 if record else 0
        self.rec_t = np.empty(bufsize)
        self.rec_kind = np.empty(bufsize, dtype=np.int8)
        self.rec_i = np.empty(bufsize, dtype=np.int32)
        self.rec_j = np.empty(bufsize, dtype=np.int32)

    def grow_types(self):
        old = len(self.counts)
        cap = 2 * old
        self.counts = np.concatenate((self.counts, np.zeros(old, np.int64)))
        self.w = fitness_table(self.params.s, cap)
        if not np.isfinite(self.w[-1] * self.params.N):
            raise OverflowError(f"fitness (1+s)**{cap} overflows; too many sweeps for one run")
        self.thr = self.thresholds.table(cap)
        self.trk = np.concatenate((self.trk, np.full((5, old), np.nan)), axis=1)
        self.mcount = np.concatenate((self.mcount, np.zeros(old, np.int64)))

    def grow_buffer(self):
        def g(a):
            out = np.empty(2 * len(a), dtype=a.dtype)
            out[:len(a)] = a
            return out
        self.rec_t, self.rec_kind = g(self.rec_t), g(self.rec_kind)
        self.rec_i, self.rec_j = g(self.rec_i), g(self.rec_j)

    def step(self, stop: StopCondition, max_steps: int, rng) -> int:
        return eng.advance(self.counts, self.w, self.istate, self.fstate, self.trk,
                           self.mcount, self.thr, self.rec_t, self.rec_kind,
                           self.rec_i, self.rec_j, self.params.N, float(self.params.mu),
                           stop.code, stop.type, float(stop.horizon), stop.max_events,
                           max_steps, self.record, self.debug, rng)

    def state(self) -> PopulationState:
        return PopulationState(self.counts.copy(), float(self.fstate[eng.F_T]),
                               float(self.fstate[eng.F_S]))


def run(params: Parameters, initial: PopulationState, stop: StopCondition,
        rng: np.random.Generator, record: bool = True, alpha: float = 0.5,
        debug: bool = False) -> Trajectory:
    """Simulate the chain from ``initial`` until ``stop`` fires.

    The result is a deterministic function of (params, initial, stop, the
    generator state).  ``Trajectory.status`` distinguishes a normal stop
    ("horizon", "condition", "absorbed") from hitting ``stop.max_events``
    ("event_cap").
    """
    from .observables import StoppingTimeLog

    sim = _Sim(params, initial, alpha, record, debug)
    max_steps = 1 if stop.predicate is not None else 2**62
    while True:
        if stop.predicate is not None and stop.predicate(sim.state()):
            status = eng.ST_CONDITION
            break
        status = sim.step(stop, max_steps, rng)
        if status == eng.ST_NEED_CAPACITY:
            sim.grow_types()
        elif status == eng.ST_BUFFER_FULL:
            sim.grow_buffer()
        elif status != eng.ST_STEP_LIMIT:
            break
    n = int(sim.istate[eng.I_NREC])
    final_counts = sim.counts.copy()
    traj = Trajectory(
        params=params,
        initial_counts=np.asarray(initial.counts, dtype=np.int64).copy(),
        t0=float(initial.time),
        times=sim.rec_t[:n].copy() if record else None,
        kinds=sim.rec_kind[:n].copy() if record else None,
        src=sim.rec_i[:n].copy() if record else None,
        dst=sim.rec_j[:n].copy() if record else None,
        final_time=float(sim.fstate[eng.F_T]),
        status=STATUS_NAMES[status],
        n_events=int(sim.istate[eng.I_NEV]),
        final_counts=final_counts,
        alpha=alpha,
        max_fitness_drift=float(sim.fstate[eng.F_DRIFT]),
        coherence_checks=int(sim.istate[eng.I_CHECKS]),
    )
    L = traj.n_types
    traj.online_log = StoppingTimeLog(
        established=sim.trk[eng.TRK_EST, :L].copy(),
        cleared=sim.trk[eng.TRK_CLEARED, :L].copy(),
        alpha=sim.trk[eng.TRK_ALPHA, :L].copy(),
        star=sim.trk[eng.TRK_STAR, :L].copy(),
        tau=sim.trk[eng.TRK_TAU, :L].copy(),
        mutations=sim.mcount[:L].copy(),
    )
    return traj


def lambda_integral(traj: Trajectory, k: int, t: float) -> float:
    """Integral of the per-capita death rate d_k from t0 to t along ``traj``."""
    if t > traj.final_time or t < traj.t0:
        raise ValueError(f"t={t} is outside the trajectory [{traj.t0}, {traj.final_time}]")
    starts = traj.position_times
    ends = np.minimum(traj.holding_ends(), t)
    d = death_rate_series(traj, k)
    widths = np.clip(ends - starts, 0.0, None)
    return math.fsum(d * widths)


def death_rate_series(traj: Trajectory, k: int) -> np.ndarray:
    """d_k in each state of the trajectory."""
    p = traj.params
    S = traj.fitness_series()
    return 1.0 - (1.0 + p.s) ** k * traj.count_series(k) / S + p.mu


def birth_rate_series(traj: Trajectory, k: int) -> np.ndarray:
    p = traj.params
    S = traj.fitness_series()
    return (p.N - traj.count_series(k)) * (1.0 + p.s) ** k / S
