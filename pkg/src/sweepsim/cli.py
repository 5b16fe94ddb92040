"""Command-line entry point: ``sweepsim simulate | verify | replay``.

Settings come from an optional flat ``key=value`` file (``--config``) and
are overridden by flags.  Exit codes: 0 success, 1 failed checks or failed
replay, 2 configuration or input errors.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import __version__
from .model import Parameters, PopulationState, StopCondition, run
from .observables import SweepReport
from .seeding import generator, map_replicates, random_master_seed, replicate_seed
from .stats import ExperimentConfig, config_hash

SUITES = ("theorem1", "corollary", "classical", "couplings", "branching")

# key -> (type, default); None defaults are filled per command
SETTINGS = {
    "n": (int, 2000), "s": (float, 0.15), "mu": (float, 1e-6), "eta": (float, 0.5),
    "k_sweeps": (int, 10), "replicates": (int, None), "seed": (int, None),
    "alpha": (float, 0.5), "gamma": (float, 0.9), "zeta": (float, 0.05),
    "out_dir": (str, "sweepsim-out"), "dump_events": (int, 0), "workers": (int, 1),
    "suite": (str, None), "max_events": (int, 500_000_000),
}


class ConfigError(Exception):
    pass


def read_config_file(path: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e}") from None
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value")
        key, val = (x.strip() for x in line.split("=", 1))
        key = key.lower().replace("-", "_")
        if key not in SETTINGS:
            raise ConfigError(f"{path}:{n}: unknown key {key!r}")
        out[key] = _convert(key, val)
    return out


def _convert(key, val):
    typ = SETTINGS[key][0]
    try:
        return typ(float(val)) if typ is int and "e" in str(val).lower() else typ(val)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {val!r}") from None


def resolve(args: argparse.Namespace) -> dict:
    cfg = {k: d for k, (_, d) in SETTINGS.items()}
    if getattr(args, "config", None):
        cfg.update(read_config_file(args.config))
    for k in SETTINGS:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    if cfg["seed"] is None:
        cfg["seed"] = random_master_seed()
        print(f"master seed: {cfg['seed']}", file=sys.stderr)
    if cfg["workers"] < 1:
        raise ConfigError("workers must be >= 1")
    return cfg


def _params(cfg) -> Parameters:
    try:
        return Parameters(cfg["n"], cfg["mu"], cfg["s"], cfg["eta"])
    except ValueError as e:
        raise ConfigError(str(e)) from None


class Outputs:
    """Files written by one command; removed again if the command fails."""

    def __init__(self, root: str):
        self.root = Path(root)
        self.created_dir = not self.root.exists()
        self.paths: list[Path] = []

    def path(self, name: str) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        p = self.root / name
        self.paths.append(p)
        return p

    def write(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text)
        return p

    def discard(self):
        for p in self.paths:
            p.unlink(missing_ok=True)
        if self.created_dir and self.root.exists() and not any(self.root.iterdir()):
            self.root.rmdir()


def _seed_record(master: int, i: int) -> dict:
    return {"replicate": i, "entropy": master, "spawn_key": [i]}


def _manifest(out: Outputs, cfg: dict, command: str, seeds: list, metrics: dict) -> None:
    stored = {k: v for k, v in sorted(cfg.items()) if k != "workers"}
    files = [p.name for p in out.paths]
    man = {"command": command, "tool_version": __version__, "config": stored,
           "config_hash": config_hash(stored), "seeds": seeds, "outputs": files,
           "metrics": metrics}
    out.write("manifest.json", json.dumps(man, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------- simulate

def _simulate_one(job):
    params, K, master, i, alpha, max_events, keep = job
    rng = generator(replicate_seed(master, i))
    traj = run(params, PopulationState.monomorphic(params.N),
               StopCondition(until="established", type=K + 1, max_events=max_events),
               rng, record=keep, alpha=alpha)
    return traj


def cmd_simulate(cfg: dict) -> int:
    from .trajio import write_trajectory

    p = _params(cfg)
    K = cfg["k_sweeps"]
    if K < 1:
        raise ConfigError("k_sweeps must be >= 1")
    if p.mu == 0:
        raise ConfigError("no sweeps possible: mu = 0 and k_sweeps >= 1")
    reps = cfg["replicates"] or 1
    out = Outputs(cfg["out_dir"])
    t_start = time.perf_counter()
    try:
        dump = cfg["dump_events"] > 0
        jobs = [(p, K, cfg["seed"], i, cfg["alpha"], cfg["max_events"], dump)
                for i in range(reps)]
        trajs = map_replicates(_simulate_one, jobs, cfg["workers"])
        report = SweepReport()
        events = []
        for i, traj in enumerate(trajs):
            report.add(i, traj.online_log, p, K)
            events.append(traj.n_events)
            if traj.status == "event_cap":
                print(f"replicate {i}: event cap reached before T_{K + 1}", file=sys.stderr)
            if dump:
                if len(traj.times) > cfg["dump_events"]:
                    print(f"replicate {i}: {len(traj.times)} events exceed the dump cap, "
                          f"trajectory not written", file=sys.stderr)
                else:
                    with open(out.path(f"trajectory_{i:04d}.jsonl"), "w") as fh:
                        write_trajectory(traj, fh)
        out.write("sweeps.csv", report.to_csv())
        wall = time.perf_counter() - t_start
        _manifest(out, cfg, "simulate", [_seed_record(cfg["seed"], i) for i in range(reps)],
                  {"wall_seconds": round(wall, 3), "events": events,
                   "events_per_second": round(sum(events) / wall) if wall > 0 else None})
    except BaseException:
        out.discard()
        raise
    print(f"wrote {len(out.paths)} files to {out.root}")
    return 0


# ----------------------------------------------------------------- verify

def _run_suite(cfg: dict):
    from . import stats

    suite = cfg["suite"]
    if suite not in SUITES:
        raise ConfigError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    if suite in ("theorem1", "corollary"):
        try:
            ec = ExperimentConfig(N=cfg["n"], mu=cfg["mu"], s=cfg["s"], eta=cfg["eta"],
                                  K=cfg["k_sweeps"],
                                  replicates=cfg["replicates"] or (20 if suite == "theorem1"
                                                                   else 200),
                                  seed=cfg["seed"], alpha=cfg["alpha"],
                                  max_events=cfg["max_events"], workers=cfg["workers"])
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if ec.mu == 0:
            raise ConfigError("no sweeps possible: mu = 0 and k_sweeps >= 1")
        rep = stats.verify_theorem1(ec) if suite == "theorem1" else stats.verify_corollary(ec)
        if suite == "theorem1":
            csv = rep.data.pop("sweep_csv")
        else:
            csv = _xbar_csv(rep.data)
        return rep, csv
    if suite == "classical":
        rep = stats.verify_classical(runs_fix=cfg["replicates"] or 100_000, seed=cfg["seed"])
        return rep, None
    if suite == "couplings":
        from .couplings import CouplingConstants
        try:
            cc = CouplingConstants(alpha=cfg["alpha"], gamma=cfg["gamma"], zeta=cfg["zeta"])
        except ValueError as e:
            raise ConfigError(str(e)) from None
        rep = stats.verify_couplings(runs=cfg["replicates"] or 100, seed=cfg["seed"],
                                     eta=cfg["eta"], consts=cc, workers=cfg["workers"])
        return rep, rep.data.pop("domination_csv")
    rep = stats.verify_branching(n_paths=cfg["replicates"] or 100_000, seed=cfg["seed"])
    return rep, None


def _xbar_csv(data: dict) -> str:
    lines = ["rescaled_time,replicate_index,xbar"]
    for key in sorted(k for k in data if k.startswith("xbar_t")):
        u = key[len("xbar_t"):]
        lines += [f"{u},{i},{x!r}" for i, x in enumerate(data[key])]
    return "\n".join(lines) + "\n"


def cmd_verify(cfg: dict) -> int:
    if cfg["suite"] is None:
        raise ConfigError("verify needs --suite")
    if cfg["suite"] not in SUITES:
        raise ConfigError(f"unknown suite {cfg['suite']!r}; choose from {', '.join(SUITES)}")
    out = Outputs(cfg["out_dir"])
    t_start = time.perf_counter()
    try:
        rep, samples = _run_suite(cfg)
        name = cfg["suite"]
        out.write(f"{name}_report.json", rep.to_json() + "\n")
        out.write(f"{name}_report.txt", rep.to_text() + "\n")
        if samples:
            out.write(f"{name}_samples.csv", samples)
        _manifest(out, cfg, "verify", [{"master": cfg["seed"]}],
                  {"wall_seconds": round(time.perf_counter() - t_start, 3)})
    except BaseException:
        out.discard()
        raise
    print(rep.to_text())
    return 0 if rep.passed else 1


# ----------------------------------------------------------------- replay

def cmd_replay(path: str) -> int:
    from .trajio import TrajectoryFormatError, read_trajectory, verify_replay

    try:
        with open(path) as fh:
            loaded = read_trajectory(fh)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except TrajectoryFormatError as e:
        print(f"error: malformed trajectory, {e}", file=sys.stderr)
        return 2
    verdict = verify_replay(loaded)
    print("final counts:", " ".join(str(int(x)) for x in verdict.final_counts))
    print(verdict.describe())
    return 0 if verdict.ok else 1


# ------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value settings file")
    common.add_argument("--n", type=int, help="population size N")
    common.add_argument("--s", type=float, help="selective advantage s")
    common.add_argument("--mu", type=float, help="mutation rate mu")
    common.add_argument("--eta", type=float, help="regime exponent eta in (0, 1)")
    common.add_argument("--k-sweeps", dest="k_sweeps", type=int, help="number of sweeps K")
    common.add_argument("--replicates", type=int)
    common.add_argument("--seed", type=int, help="master seed (random and printed if absent)")
    common.add_argument("--alpha", type=float)
    common.add_argument("--gamma", type=float)
    common.add_argument("--zeta", type=float)
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("--workers", type=int)
    common.add_argument("--max-events", dest="max_events", type=int,
                        help="per-replicate event cap")

    ap = argparse.ArgumentParser(prog="sweepsim", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"sweepsim {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    sim = sub.add_parser("simulate", parents=[common], help="run replicates, write sweep CSV")
    sim.add_argument("--dump-events", dest="dump_events", type=int, nargs="?", const=1_000_000,
                     help="write JSONL trajectories of at most this many events")
    ver = sub.add_parser("verify", parents=[common], help="run a verification suite")
    ver.add_argument("--suite", help="|".join(SUITES))
    rp = sub.add_parser("replay", help="replay a JSONL trajectory and check it")
    rp.add_argument("trajectory")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.command == "replay":
        return cmd_replay(args.trajectory)
    try:
        cfg = resolve(args)
        return cmd_simulate(cfg) if args.command == "simulate" else cmd_verify(cfg)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
