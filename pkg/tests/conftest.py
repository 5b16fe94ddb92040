import numpy as np
import pytest

from sweepsim.model import Parameters, Trajectory


def make_trajectory(params, initial, events, final_time=None, t0=0.0, alpha=0.5):
    """Hand-built trajectory from (time, kind, i, j) tuples; kind 0 = replacement."""
    initial = np.asarray(initial, dtype=np.int64)
    L = max([len(initial)] + [max(e[2], e[3]) + 1 for e in events])
    counts = np.zeros(L, dtype=np.int64)
    counts[:len(initial)] = initial
    for _, _, i, j in events:
        counts[i] -= 1
        counts[j] += 1
    times = np.array([e[0] for e in events], dtype=np.float64)
    return Trajectory(
        params=params, initial_counts=initial, t0=t0, times=times,
        kinds=np.array([e[1] for e in events], dtype=np.int8),
        src=np.array([e[2] for e in events], dtype=np.int32),
        dst=np.array([e[3] for e in events], dtype=np.int32),
        final_time=final_time if final_time is not None else (times[-1] if len(times) else t0),
        status="horizon", n_events=len(events), final_counts=counts, alpha=alpha)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_params():
    return Parameters(N=200, mu=2e-4, s=0.2, eta=0.5)


ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
