"""JSON-lines persistence and replay verification for trajectories.

Layout: a header object, one object per event, then a footer::

    {"format": "sweepsim-trajectory", "version": 1, "params": {...},
     "initial": [X_0, X_1, ...], "t0": 0.0, "alpha": 0.5}
    {"t": 0.125, "kind": "repl", "i": 0, "j": 1, "xi": 1999, "xj": 1}
    ...
    {"final": [...], "final_time": 123.0, "status": "condition", "n_events": 42}

``xi``/``xj`` are the counts of types i and j right after the event.  They
are redundant with replay and let a verifier pinpoint a corrupted line.
Floats are written with ``repr`` so times round-trip bit-exactly.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import IO, Optional

import numpy as np

from .model import Parameters, Trajectory, fitness_table

FORMAT = "sweepsim-trajectory"
VERSION = 1
KINDS = {"repl": 0, "mut": 1}
KIND_NAMES = {0: "repl", 1: "mut"}


class TrajectoryFormatError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


def write_trajectory(traj: Trajectory, fh: IO[str], max_events: Optional[int] = None) -> int:
    """Write ``traj``; refuses when it has more than ``max_events`` events."""
    if not traj.recorded:
        raise ValueError("trajectory has no recorded events")
    n = len(traj.times)
    if max_events is not None and n > max_events:
        raise ValueError(f"trajectory has {n} events, above the dump cap {max_events}")
    header = {"format": FORMAT, "version": VERSION, "params": traj.params.to_dict(),
              "initial": [int(x) for x in traj.initial_counts], "t0": traj.t0,
              "alpha": traj.alpha}
    fh.write(json.dumps(header) + "\n")
    m = traj.count_matrix()
    rows = np.arange(1, n + 1)
    xi = m[rows, traj.src]
    xj = m[rows, traj.dst]
    for t, k, i, j, a, b in zip(traj.times.tolist(), traj.kinds.tolist(), traj.src.tolist(),
                                traj.dst.tolist(), xi.tolist(), xj.tolist()):
        fh.write('{"t": %r, "kind": "%s", "i": %d, "j": %d, "xi": %d, "xj": %d}\n'
                 % (t, KIND_NAMES[k], i, j, a, b))
    footer = {"final": [int(x) for x in np.trim_zeros(traj.final_counts, "b")],
              "final_time": traj.final_time, "status": traj.status, "n_events": traj.n_events}
    fh.write(json.dumps(footer) + "\n")
    return n


@dataclass
class LoadedTrajectory:
    trajectory: Trajectory
    checks: list  # (event index, xi, xj) as stored, -1 when absent
    footer: dict


def read_trajectory(fh: IO[str]) -> LoadedTrajectory:
    """Parse a trajectory file; malformed lines raise TrajectoryFormatError."""
    lines = fh.read().splitlines()
    if not lines:
        raise TrajectoryFormatError(1, "empty file")
    objs = []
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            objs.append((n, json.loads(line)))
        except json.JSONDecodeError as e:
            raise TrajectoryFormatError(n, f"invalid JSON ({e.msg})") from None
    ln, head = objs[0]
    if not isinstance(head, dict) or head.get("format") != FORMAT:
        raise TrajectoryFormatError(ln, "missing trajectory header")
    try:
        params = Parameters.from_dict(head["params"])
        initial = np.array(head["initial"], dtype=np.int64)
        t0 = float(head.get("t0", 0.0))
    except (KeyError, TypeError, ValueError) as e:
        raise TrajectoryFormatError(ln, f"bad header: {e}") from None

    footer = {}
    body = objs[1:]
    if body and isinstance(body[-1][1], dict) and "final" in body[-1][1]:
        footer = body[-1][1]
        body = body[:-1]
    times, kinds, src, dst, checks = [], [], [], [], []
    for idx, (n, ev) in enumerate(body):
        try:
            if not isinstance(ev, dict):
                raise TypeError("not an object")
            t = float(ev["t"])
            k = KINDS[ev["kind"]]
            i, j = int(ev["i"]), int(ev["j"])
        except (KeyError, TypeError, ValueError) as e:
            raise TrajectoryFormatError(n, f"bad event record ({e!r})") from None
        if i < 0 or j < 0 or i == j or (k == 1 and j != i + 1) or not math.isfinite(t):
            raise TrajectoryFormatError(n, "inconsistent event fields")
        times.append(t)
        kinds.append(k)
        src.append(i)
        dst.append(j)
        checks.append((idx, int(ev.get("xi", -1)), int(ev.get("xj", -1))))
    final_time = float(footer.get("final_time", times[-1] if times else t0))
    final = np.array(footer.get("final", initial), dtype=np.int64)
    traj = Trajectory(
        params=params, initial_counts=initial, t0=t0,
        times=np.array(times, dtype=np.float64), kinds=np.array(kinds, dtype=np.int8),
        src=np.array(src, dtype=np.int32), dst=np.array(dst, dtype=np.int32),
        final_time=final_time, status=str(footer.get("status", "unknown")),
        n_events=int(footer.get("n_events", len(times))), final_counts=final,
        alpha=float(head.get("alpha", 0.5)))
    return LoadedTrajectory(traj, checks, footer)


@dataclass
class ReplayVerdict:
    ok: bool
    final_counts: np.ndarray
    n_events: int
    failed_event: Optional[int] = None
    reason: str = ""
    max_fitness_drift: float = 0.0

    def describe(self) -> str:
        if self.ok:
            return f"OK: {self.n_events} events replayed"
        return f"FAIL at event {self.failed_event}: {self.reason}"


def verify_replay(loaded: LoadedTrajectory, coherence_every: int = 10_000,
                  tol: float = 1e-9) -> ReplayVerdict:
    """Replay events one by one, checking conservation, non-negativity, time
    order, the stored per-event counts and the cached total fitness."""
    traj = loaded.trajectory
    p = traj.params
    L = traj.n_types + 1
    counts = np.zeros(L, dtype=np.int64)
    counts[:len(traj.initial_counts)] = traj.initial_counts
    w = fitness_table(p.s, L)
    S = float(np.dot(w, counts))
    drift = 0.0

    def fail(idx, why):
        return ReplayVerdict(False, counts.copy(), idx, idx, why, drift)

    if counts.sum() != p.N:
        return fail(0, f"initial counts sum to {counts.sum()}, N={p.N}")
    last_t = traj.t0
    for idx in range(len(traj.times)):
        t, i, j = traj.times[idx], traj.src[idx], traj.dst[idx]
        if t < last_t:
            return fail(idx, "event times decrease")
        last_t = t
        counts[i] -= 1
        counts[j] += 1
        S += w[j] - w[i]
        if counts[i] < 0:
            return fail(idx, f"count of type {i} became negative")
        _, xi, xj = loaded.checks[idx]
        if (xi >= 0 and xi != counts[i]) or (xj >= 0 and xj != counts[j]):
            return fail(idx, f"stored counts ({xi}, {xj}) disagree with replay "
                             f"({counts[i]}, {counts[j]})")
        if (idx + 1) % coherence_every == 0:
            exact = float(np.dot(w, counts))
            drift = max(drift, abs(S - exact) / exact)
            if drift > tol:
                return fail(idx, f"cached total fitness drifted by {drift:.3g}")
            S = exact
    n = len(traj.times)
    if "final" in loaded.footer:
        want = np.zeros(L, dtype=np.int64)
        f = np.array(loaded.footer["final"], dtype=np.int64)
        if len(f) > L:
            return fail(n, "final counts list more types than the events reach")
        want[:len(f)] = f
        if not np.array_equal(want, counts):
            return fail(n, "final counts disagree with replay")
    exact = float(np.dot(w, counts))
    drift = max(drift, abs(S - exact) / exact)
    return ReplayVerdict(True, np.trim_zeros(counts, "b"), n, None, "", drift)
