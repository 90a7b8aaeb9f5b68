"""Command-line orchestrator.

Subcommands:

    qsdlab run <config>          integrate and emit section CSVs + manifest
    qsdlab compare <dirA> <dirB> diff two run directories (matched seeds)
    qsdlab selftest              noise statistics + ensemble-vs-master checks

Config files are flat ``key = value`` lines with ``#`` comments; unknown
keys are rejected with their line number.  Identical config and seed give
bit-identical artifacts regardless of worker scheduling (QSDLAB_THREADS
only fans independent trajectories out to processes).

Exit codes: 0 success, 1 usage/config error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import __version__
from . import fockspace as fs
from . import linearized as lin
from . import master as me
from . import movingbasis as mb
from . import sections as sec
from . import trajectory as tj
from .errors import ConfigError, ParameterError, QsdLabError
from .fockspace import FockBasis
from .models import (ClassicalState, DRIVE_PERIOD, DuffingParams,
                     build_duffing_quantum, classical_integrate,
                     default_basis_dim)

BACKENDS = ("classical", "qsd", "mqsd", "linearized", "master")


@dataclass
class RunConfig:
    backend: str = "qsd"
    gamma: float = 0.125
    g: float = 0.3
    beta: float = 1.0
    ansatz_coeff: float | None = None    # default sqrt(gamma)
    basis_dim: int | None = None         # default: sizing heuristic
    min_dim: int = 10
    max_dim: int = 64
    steps_per_period: int = 1000
    periods: int = 100
    n_trajectories: int = 1
    seed: int = 1
    trunc_tol: float = 1e-6
    recenter_tol: float = 1e-8
    noise: bool = True
    x0: float = 0.1
    p0: float = 0.1
    output_dir: str = "qsdlab-run"

    @property
    def dt(self) -> float:
        return DRIVE_PERIOD / self.steps_per_period

    @property
    def params(self) -> DuffingParams:
        return DuffingParams(gamma=self.gamma, g=self.g, beta=self.beta,
                             ansatz_coeff=self.ansatz_coeff)

    def validate(self):
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}, "
                              f"got {self.backend!r}")
        if self.periods < 1:
            raise ConfigError(f"periods must be >= 1, got {self.periods}")
        if self.n_trajectories < 1:
            raise ConfigError(f"n_trajectories must be >= 1, "
                              f"got {self.n_trajectories}")
        if self.steps_per_period < 1:
            raise ConfigError("steps_per_period must be >= 1")
        for name in ("trunc_tol", "recenter_tol"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must be in (0, 1), got {v}")
        if self.beta <= 0:
            raise ConfigError(f"beta must be > 0, got {self.beta}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if not 2 <= self.min_dim <= self.max_dim:
            raise ConfigError("need 2 <= min_dim <= max_dim")


_BOOL_WORDS = {"true": True, "false": False, "yes": True, "no": False,
               "1": True, "0": False}


def _convert(name: str, text: str, target_type, line: int):
    if target_type is bool:
        try:
            return _BOOL_WORDS[text.lower()]
        except KeyError:
            raise ConfigError(f"{name}: expected a boolean, got {text!r}", line)
    try:
        if target_type is int:
            return int(text, 0)
        if target_type is float:
            return float(text)
    except ValueError:
        raise ConfigError(
            f"{name}: expected {target_type.__name__}, got {text!r}", line)
    return text


_FIELD_TYPES = {
    "backend": str, "gamma": float, "g": float, "beta": float,
    "ansatz_coeff": float, "basis_dim": int, "min_dim": int, "max_dim": int,
    "steps_per_period": int, "periods": int, "n_trajectories": int,
    "seed": int, "trunc_tol": float, "recenter_tol": float, "noise": bool,
    "x0": float, "p0": float, "output_dir": str,
}


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines into a validated RunConfig.

    ``dt`` is accepted as an alternative to steps_per_period but must divide
    the 2*pi drive period so section sampling stays on the step grid.
    """
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not eq or not key or not value:
            raise ConfigError(f"expected 'key = value', got {raw!r}", lineno)
        if key == "dt":
            dt = _convert("dt", value, float, lineno)
            if dt <= 0:
                raise ConfigError(f"dt must be > 0, got {dt}", lineno)
            spp = DRIVE_PERIOD / dt
            if abs(spp - round(spp)) > 1e-6:
                raise ConfigError(
                    f"dt = {dt} does not divide the drive period 2*pi; "
                    "section sampling would fall off the step grid", lineno)
            key, parsed = "steps_per_period", int(round(spp))
        elif key in _FIELD_TYPES:
            parsed = _convert(key, value, _FIELD_TYPES[key], lineno)
        else:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in values:
            # dt and steps_per_period both land here, so giving both is
            # also reported as a duplicate.
            raise ConfigError(f"duplicate key {key!r}", lineno)
        values[key] = parsed
    config = RunConfig(**values)
    config.validate()
    return config


# --------------------------------------------------------------------------
# backends

def _initial_unscaled(config: RunConfig) -> tuple[float, float]:
    """Initial (q, p) in unscaled quantum units from the scaled (x0, p0)."""
    return config.x0 / config.beta, config.p0 / config.beta


def _fixed_basis(config: RunConfig) -> FockBasis:
    dim = config.basis_dim
    if dim is None:
        dim = default_basis_dim(config.beta)
    return FockBasis(dim)


def _run_classical(config: RunConfig, index: int):
    dt = config.dt
    traj = classical_integrate(
        ClassicalState(config.x0, config.p0, 0.0), config.params,
        t_end=config.periods * DRIVE_PERIOD, dt=dt,
        sample_every=config.steps_per_period)
    points = [sec.from_classical(s, n) for n, s in enumerate(traj)]
    return points, {"dims": [0], "validity_max": None, "closure_broke_down": False}


def _run_qsd(config: RunConfig, index: int):
    basis = _fixed_basis(config)
    q0, p0 = _initial_unscaled(config)
    psi0 = fs.coherent_state(basis, complex(q0, p0) / math.sqrt(2))
    model = build_duffing_quantum(config.params, basis)
    ns = tj.NoiseStream.for_trajectory(config.seed, index)
    record = tj.evolve_trajectory(
        psi0, model, 0.0, config.periods * DRIVE_PERIOD, config.dt, ns,
        sample_times=sec.section_times(config.periods))
    points = sec.record_to_points(record, config.beta)
    return points, {"dims": record.basis_dims.tolist(), "validity_max": None,
                    "closure_broke_down": False}


def _run_mqsd(config: RunConfig, index: int):
    q0, p0 = _initial_unscaled(config)
    ms0 = mb.MovingState(mb.PhaseFrame(q0, p0),
                         fs.vacuum_state(FockBasis(max(config.min_dim, 16))))
    ns = tj.NoiseStream.for_trajectory(config.seed, index)
    record = mb.evolve_mqsd_trajectory(
        ms0, mb.duffing_frame_factory(config.params), 0.0,
        config.periods * DRIVE_PERIOD, config.dt, ns,
        sample_times=sec.section_times(config.periods),
        trunc_tol=config.trunc_tol, min_dim=config.min_dim,
        max_dim=config.max_dim, recenter_tol=config.recenter_tol)
    points = sec.record_to_points(record, config.beta)
    return points, {"dims": record.basis_dims.tolist(), "validity_max": None,
                    "closure_broke_down": False}


def _run_linearized(config: RunConfig, index: int):
    q0, p0 = _initial_unscaled(config)
    ns = tj.NoiseStream.for_trajectory(config.seed, index)
    record = lin.evolve_linearized(
        lin.coherent_moments(q0, p0), config.params, 0.0,
        config.periods * DRIVE_PERIOD, config.dt, ns,
        sample_times=sec.section_times(config.periods),
        noise=config.noise, on_breakdown="floor")
    points = sec.record_to_points(record, config.beta)
    vmax = [float(np.max([v[i] for v in record.validity_history]))
            for i in range(3)]
    return points, {"dims": record.basis_dims.tolist(), "validity_max": vmax,
                    "closure_broke_down": record.closure_broke_down}


def _run_master(config: RunConfig, index: int):
    basis = _fixed_basis(config)
    q0, p0 = _initial_unscaled(config)
    psi0 = fs.coherent_state(basis, complex(q0, p0) / math.sqrt(2))
    model = build_duffing_quantum(config.params, basis)
    Q, P = fs.build_quadratures(basis)
    rho = me.pure_density(psi0.amplitudes, basis)
    points = []
    for n in range(config.periods + 1):
        if n > 0:
            rho = me.master_evolve(rho, model, DRIVE_PERIOD * (n - 1),
                                   DRIVE_PERIOD * n, config.dt)
        q = me.expectation(Q.entries, rho).real
        p = me.expectation(P.entries, rho).real
        points.append(sec.SectionPoint(n, config.beta * q, config.beta * p))
    return points, {"dims": [basis.dim], "validity_max": None,
                    "closure_broke_down": False}


_BACKEND_RUNNERS = {
    "classical": _run_classical,
    "qsd": _run_qsd,
    "mqsd": _run_mqsd,
    "linearized": _run_linearized,
    "master": _run_master,
}


def _run_one(config: RunConfig, index: int):
    points, stats = _BACKEND_RUNNERS[config.backend](config, index)
    return index, points, stats


PLOT_SCRIPT = """\
#!/usr/bin/env python3
\"\"\"Scatter-plot every section CSV in this directory.\"\"\"
import csv, glob, sys
import matplotlib.pyplot as plt

for path in sorted(glob.glob("section_*.csv")):
    with open(path) as fh:
        header = fh.readline()
        rows = list(csv.DictReader(fh))
    xs = [float(r["x"]) for r in rows]
    ps = [float(r["p"]) for r in rows]
    plt.scatter(xs, ps, s=2, label=path)
plt.xlabel("x (scaled)")
plt.ylabel("p (scaled)")
plt.legend(fontsize=6)
plt.savefig("section.png", dpi=200)
print("wrote section.png")
"""


def run(config: RunConfig) -> int:
    """Dispatch a run; writes one section CSV per trajectory plus a manifest."""
    config.validate()
    os.makedirs(config.output_dir, exist_ok=True)
    started = time.time()
    n_traj = config.n_trajectories if config.backend in ("qsd", "mqsd",
                                                         "linearized") else 1
    workers = int(os.environ.get("QSDLAB_THREADS", "1") or "1")
    results = {}
    if workers > 1 and n_traj > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=min(workers, n_traj)) as pool:
            for index, points, stats in pool.map(
                    _run_one, [config] * n_traj, range(n_traj)):
                results[index] = (points, stats)
    else:
        for index in range(n_traj):
            results[index] = _run_one(config, index)[1:]

    traj_meta = []
    for index in sorted(results):
        points, stats = results[index]
        path = os.path.join(config.output_dir, f"section_{index:03d}.csv")
        sec.emit_section(points, path, model=config.backend, beta=config.beta,
                         gamma=config.gamma, g=config.g,
                         seed=config.seed ^ index)
        dims = stats["dims"]
        traj_meta.append({
            "index": index,
            "seed": config.seed ^ index,
            "dim_min": int(min(dims)), "dim_max": int(max(dims)),
            "dim_mean": float(np.mean(dims)),
            "validity_max": stats["validity_max"],
            "closure_broke_down": stats["closure_broke_down"],
        })

    manifest = {
        "config": asdict(config),
        "code_version": __version__,
        "wall_clock_s": time.time() - started,
        "trajectories": traj_meta,
    }
    _write_json_atomic(os.path.join(config.output_dir, "manifest.json"), manifest)
    with open(os.path.join(config.output_dir, "plot.py"), "w",
              encoding="utf-8", newline="\n") as fh:
        fh.write(PLOT_SCRIPT)
    return 0


def _write_json_atomic(path: str, payload: dict):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


# --------------------------------------------------------------------------
# compare

_SHARED_KEYS = ("gamma", "g", "beta", "seed", "periods")


def compare(dir_a: str, dir_b: str) -> dict:
    """Diff two run directories sharing model parameters and seed."""
    man_a = _load_manifest(dir_a)
    man_b = _load_manifest(dir_b)
    for key in _SHARED_KEYS:
        if man_a["config"][key] != man_b["config"][key]:
            raise ConfigError(
                f"runs differ in {key}: {man_a['config'][key]} vs "
                f"{man_b['config'][key]}; refusing to compare")
    names_a = _section_files(dir_a)
    names_b = _section_files(dir_b)
    common = sorted(set(names_a) & set(names_b))
    if not common:
        raise ConfigError("no common section files to compare")
    per_traj = []
    for name in common:
        _, pa = sec.parse_section(os.path.join(dir_a, name))
        _, pb = sec.parse_section(os.path.join(dir_b, name))
        rms, max_dx, max_dp, count = sec.matched_differences(pa, pb)
        xs = pa + pb
        bbox = sec.bounding_box(xs)
        if bbox[0] == bbox[1] or bbox[2] == bbox[3]:
            jac = 1.0 if rms == 0.0 else 0.0
        else:
            jac = sec.jaccard(sec.occupancy_grid(pa, bbox),
                              sec.occupancy_grid(pb, bbox))
        per_traj.append({"file": name, "rms": rms, "jaccard": jac,
                         "max_dx": max_dx, "max_dp": max_dp,
                         "matched_points": count})
    report = {
        "dir_a": dir_a, "dir_b": dir_b,
        "backend_a": man_a["config"]["backend"],
        "backend_b": man_b["config"]["backend"],
        "trajectories": per_traj,
        "rms_mean": float(np.mean([t["rms"] for t in per_traj])),
        "jaccard_mean": float(np.mean([t["jaccard"] for t in per_traj])),
    }
    return report


def _load_manifest(run_dir: str) -> dict:
    path = os.path.join(run_dir, "manifest.json")
    if not os.path.exists(path):
        raise ConfigError(f"{run_dir}: no manifest.json (not a run directory?)")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _section_files(run_dir: str) -> list[str]:
    return [f for f in os.listdir(run_dir)
            if f.startswith("section_") and f.endswith(".csv")]


# --------------------------------------------------------------------------
# selftest

def selftest(verbose: bool = True) -> int:
    """Noise-statistics and ensemble-vs-master spot checks; exit 2 on failure."""
    failures = []

    def check(name, ok, detail=""):
        if verbose:
            print(f"[{'PASS' if ok else 'FAIL'}] {name} {detail}")
        if not ok:
            failures.append(name)

    # Complex Wiener moments over 10^6 draws at dt = 0.01.
    ns = tj.NoiseStream(2024)
    dt = 0.01
    n = 1_000_000
    raw = ns.generator.standard_normal((n, 2))
    xi = (raw[:, 0] + 1j * raw[:, 1]) * math.sqrt(dt / 2.0)
    check("noise mean", abs(np.mean(xi)) <= 4.0 * math.sqrt(dt / n))
    check("noise squared mean", abs(np.mean(xi ** 2)) <= 4.0 * dt / math.sqrt(n))
    check("noise |xi|^2 mean",
          abs(np.mean(np.abs(xi) ** 2) - dt) <= 0.01 * dt)

    # Small damped-oscillator ensemble against the master oracle.
    basis = FockBasis(24)
    Q, P = fs.build_quadratures(basis)
    from .fockspace import OperatorMatrix
    h = OperatorMatrix(basis, (Q.entries @ Q.entries + P.entries @ P.entries) / 2,
                       hermitian=True, bandwidth=2)
    a, _ = fs.build_ladder(basis)
    gamma = 0.125
    lop = OperatorMatrix(basis, 2.0 * math.sqrt(gamma) * a.entries, bandwidth=1)
    from .models import OpenSystemModel
    model = OpenSystemModel(basis=basis, h_static=h, h_drive=None,
                            drive_coeff=None, lindblads=[lop])
    psi0 = fs.coherent_state(basis, 1.0)
    t_end, dt = 1.0, 1e-3
    caps = tj.evolve_ensemble(psi0, model, 0.0, t_end, dt, seed_base=7,
                              n_traj=200, capture_times=[t_end])
    rho_ens = tj.ensemble_mean_density(
        [fs.StateVector(basis, row) for row in caps[t_end]])
    rho_me = me.master_evolve(me.pure_density(psi0.amplitudes, basis), model,
                              0.0, t_end, dt)
    dist = me.trace_distance(rho_ens, rho_me)
    check("ensemble vs master", dist <= 0.05, f"(trace distance {dist:.4f})")

    return 2 if failures else 0


# --------------------------------------------------------------------------
# entry point

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="qsdlab",
        description="Quantum state diffusion simulator for the forced, "
                    "damped Duffing oscillator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="integrate a configured run",
                           description=_config_help())
    p_run.add_argument("config", help="path to a key = value config file")

    p_cmp = sub.add_parser("compare", help="diff two run directories")
    p_cmp.add_argument("dir_a")
    p_cmp.add_argument("dir_b")
    p_cmp.add_argument("--output", help="write the JSON report here too")

    sub.add_parser("selftest", help="noise statistics and oracle spot checks")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            try:
                with open(args.config, encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return 1
            config = parse_config(text)
            return run(config)
        if args.command == "compare":
            report = compare(args.dir_a, args.dir_b)
            payload = json.dumps(report, indent=2, sort_keys=True)
            print(payload)
            if args.output:
                with open(args.output, "w", encoding="utf-8") as fh:
                    fh.write(payload + "\n")
            return 0
        if args.command == "selftest":
            return selftest()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except QsdLabError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    return 1


def _config_help() -> str:
    lines = ["Config keys and defaults:"]
    defaults = RunConfig()
    for f in fields(RunConfig):
        default = getattr(defaults, f.name)
        if f.name == "ansatz_coeff":
            default = "sqrt(gamma)"
        if f.name == "basis_dim":
            default = "ceil((3/beta)^2), capped at 4096"
        lines.append(f"  {f.name} = {default}")
    lines.append("  dt = 2*pi/steps_per_period (alternative to steps_per_period)")
    return "\n".join(lines)


if __name__ == "__main__":
    sys.exit(main())
