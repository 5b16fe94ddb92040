import io
import json

import numpy as np
import pytest

from sweepsim.model import Parameters, PopulationState, StopCondition, run
from sweepsim.trajio import TrajectoryFormatError, read_trajectory, verify_replay, write_trajectory

from conftest import make_trajectory


@pytest.fixture
def dumped(small_params):
    traj = run(small_params, PopulationState.monomorphic(200),
               StopCondition(max_events=25_000), np.random.default_rng(21))
    buf = io.StringIO()
    write_trajectory(traj, buf)
    return traj, buf.getvalue()


def test_round_trip_is_bit_exact(dumped):
    traj, text = dumped
    back = read_trajectory(io.StringIO(text)).trajectory
    assert np.array_equal(back.times, traj.times)  # exact float equality
    assert np.array_equal(back.src, traj.src) and np.array_equal(back.dst, traj.dst)
    assert back.params == traj.params and back.final_time == traj.final_time


def test_replay_ok(dumped):
    traj, text = dumped
    v = verify_replay(read_trajectory(io.StringIO(text)), coherence_every=1000)
    assert v.ok, v.describe()
    assert v.n_events == 25_000
    assert np.array_equal(v.final_counts, np.trim_zeros(traj.final_counts, "b"))


def test_corrupted_count_fails_at_exact_event(dumped):
    _, text = dumped
    lines = text.splitlines()
    bad = 1234
    rec = json.loads(lines[1 + bad])
    rec["xi"] += 1
    lines[1 + bad] = json.dumps(rec)
    v = verify_replay(read_trajectory(io.StringIO("\n".join(lines))))
    assert not v.ok and v.failed_event == bad


def test_corrupted_type_breaks_replay(dumped):
    _, text = dumped
    lines = text.splitlines()
    rec = json.loads(lines[10])
    rec["i"], rec["j"] = rec["j"], rec["i"]
    rec.pop("xi"), rec.pop("xj")
    lines[10] = json.dumps(rec)
    v = verify_replay(read_trajectory(io.StringIO("\n".join(lines))))
    assert not v.ok


def test_empty_event_list_keeps_initial_state():
    p = Parameters(5, 0.0, 0.2)
    traj = make_trajectory(p, [2, 3], [], final_time=4.0)
    buf = io.StringIO()
    write_trajectory(traj, buf)
    v = verify_replay(read_trajectory(io.StringIO(buf.getvalue())))
    assert v.ok and list(v.final_counts) == [2, 3] and v.n_events == 0


def test_malformed_lines_report_line_number(dumped):
    _, text = dumped
    lines = text.splitlines()
    lines[5] = '{"t": 1.0, "kind": "repl"'
    with pytest.raises(TrajectoryFormatError) as e:
        read_trajectory(io.StringIO("\n".join(lines)))
    assert e.value.line == 6
    lines[5] = '{"t": 1.0, "kind": "mut", "i": 0, "j": 2}'
    with pytest.raises(TrajectoryFormatError) as e:
        read_trajectory(io.StringIO("\n".join(lines)))
    assert e.value.line == 6
    with pytest.raises(TrajectoryFormatError):
        read_trajectory(io.StringIO('{"hello": 1}\n'))
    with pytest.raises(TrajectoryFormatError):
        read_trajectory(io.StringIO(""))


def test_dump_cap(dumped):
    traj, _ = dumped
    with pytest.raises(ValueError):
        write_trajectory(traj, io.StringIO(), max_events=100)
