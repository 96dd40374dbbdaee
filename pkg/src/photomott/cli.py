"""Command-line driver: ``photomott simulate|scan|speed|tomography-check``.

Configs are flat ``key = value`` files with ``#`` comments.  Energies and
rates are in units of J, times in units of 1/J.  Lists are comma separated.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    PROTOCOLS,
    propagation_experiment,
    reflection_guard,
    scan_dissipation,
    v_max,
)
from .dynamics import TimeGrid, default_dt, evolve_master, evolve_pure
from .entanglement import measure_moments, partial_trace_pair, tomography_reconstruct
from .hilbert import DENSE_DIM_CAP, PURE_DIM_CAP, DimensionError, LatticeSpec
from .states import center_site, prepare_ideal, prepare_via_pulse
from .trajectories import TrajectoryConfig

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
INITS = ("mott", "doublon", "holon", "pulse")
SOLVERS = ("exact", "trajectory", "pure")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


def _floats(text):
    return [float(x) for x in str(text).split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in str(text).split(",") if x.strip()]


@dataclass
class RunConfig:
    L: int = 5
    cutoff: int = 3
    omega_c: float = 0.0
    U: float = 33.3
    J: float = 1.0
    gamma: float = 0.0
    gamma_phi: float = 0.0
    init: str = "doublon"
    site: int | None = None
    drive_amplitude: float | None = None
    pulse_target: str = "doublon"
    solver: str = "exact"
    pure_method: str = "rk4"
    t_max: float | None = None
    dt: float | None = None
    save_stride: int | None = None
    n_traj: int = 500
    master_seed: int = 0
    chunk_size: int = 32
    pairs: list | None = None
    output_dir: str = "out"
    # scan / speed options
    protocol: str = "doublon"
    channel: str = "loss"
    rates: list | None = None
    holon_hopping_factor: float = 2.0
    r: int = 1
    u_over_j: list | None = None
    protocols: list | None = None

    _parsers = {
        "L": int, "cutoff": int, "site": int, "save_stride": int, "n_traj": int,
        "master_seed": int, "chunk_size": int, "r": int,
        "omega_c": float, "U": float, "J": float, "gamma": float, "gamma_phi": float,
        "drive_amplitude": float, "t_max": float, "dt": float, "holon_hopping_factor": float,
        "pairs": _ints, "rates": _floats, "u_over_j": _floats,
        "protocols": lambda s: [x.strip() for x in s.split(",") if x.strip()],
    }

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            try:
                values[key] = cls._parsers.get(key, str)(val)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
        cfg = cls(**values)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())

    def validate(self) -> None:
        if self.init not in INITS:
            raise ConfigError(f"init must be one of {INITS}")
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}")
        if self.init == "pulse" and not self.drive_amplitude:
            raise ConfigError("init = pulse needs drive_amplitude")
        if self.solver == "pure" and (self.gamma > 0 or self.gamma_phi > 0):
            raise ConfigError("solver = pure needs gamma = gamma_phi = 0")
        if self.pure_method not in ("rk4", "expm"):
            raise ConfigError("pure_method must be rk4 or expm")
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {PROTOCOLS}")
        if self.channel not in ("loss", "dephasing"):
            raise ConfigError("channel must be loss or dephasing")
        try:
            self.spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def spec(self, **changes) -> LatticeSpec:
        base = dict(L=self.L, cutoff=self.cutoff, omega_c=self.omega_c, U=self.U, J=self.J,
                    gamma=self.gamma, gamma_phi=self.gamma_phi)
        base.update(changes)
        return LatticeSpec(**base)

    def grid(self, spec: LatticeSpec, t_default: float) -> TimeGrid:
        dt = self.dt if self.dt is not None else default_dt(spec)
        t_max = self.t_max if self.t_max is not None else t_default
        stride = self.save_stride if self.save_stride is not None else max(1, int(round(0.01 / dt)))
        return TimeGrid(t_max=t_max, dt=dt, save_stride=stride)

    def traj_config(self) -> TrajectoryConfig:
        return TrajectoryConfig(n_traj=self.n_traj, master_seed=self.master_seed,
                                chunk_size=self.chunk_size)

    def echo(self) -> dict:
        return {k: v for k, v in asdict(self).items() if not k.startswith("_")}


def _fmt(x) -> str:
    return format(float(x), ".12g")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj) if np.isfinite(obj) else None
    return obj


def _summary_diagnostics(diag: dict) -> dict:
    jc = diag.get("jump_counts")
    return {
        "solver": diag.get("solver"),
        "steps": int(diag.get("steps", 0)),
        "jumps_total": int(diag["jumps_total"]) if "jumps_total" in diag else None,
        "jump_counts": [int(x) for x in jc] if jc is not None else None,
        "wall_time_s": float(diag.get("wall_time_s", 0.0)),
    }


def _batch_diagnostics(cfg: RunConfig, wall: float) -> dict:
    return {"solver": cfg.solver, "steps": 0, "jumps_total": None, "jump_counts": None,
            "wall_time_s": time.perf_counter() - wall}


def _peak_row(r, p) -> dict:
    return {"r": int(r), "t_peak": p.t_peak if p.found else None, "n_peak": p.n_peak,
            "found": p.found, "at_edge": p.at_edge, "revival_excluded": p.revival_excluded}


def _write_summary(out: Path, command: str, cfg: RunConfig, peaks, speed, diagnostics,
                   extra=None) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "command": command,
        "config": cfg.echo(),
        "peaks": peaks,
        "speed": speed,
        "diagnostics": diagnostics,
    }
    if extra:
        doc.update(extra)
    with open(out / "summary.json", "w", newline="\n") as fh:
        json.dump(_jsonable(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _initial_state(cfg: RunConfig, spec: LatticeSpec):
    site = cfg.site if cfg.site is not None else center_site(spec)
    if cfg.init == "pulse":
        psi, report = prepare_via_pulse(spec, site, cfg.drive_amplitude, cfg.pulse_target)
        return psi, report
    return prepare_ideal(spec, cfg.init, site)


def _protocol_for(cfg: RunConfig) -> str:
    if cfg.init == "holon" or (cfg.init == "pulse" and cfg.pulse_target == "holon"):
        return "holon"
    return "doublon"


def _solver_cap(cfg: RunConfig, spec: LatticeSpec) -> None:
    cap = DENSE_DIM_CAP if cfg.solver == "exact" else PURE_DIM_CAP
    if spec.dim > cap:
        name = "DENSE_DIM_CAP" if cfg.solver == "exact" else "PURE_DIM_CAP"
        raise DimensionError(f"dimension {spec.dim} exceeds {name} = {cap} for solver {cfg.solver}")


def cmd_simulate(cfg: RunConfig, out: Path, threads: int = 1) -> int:
    spec = cfg.spec()
    _solver_cap(cfg, spec)
    c = center_site(spec)
    r_list = cfg.pairs or list(range(1, c + 1))
    protocol = _protocol_for(cfg)
    guard = reflection_guard(spec.L, min(r_list), v_max(protocol, spec.U, spec.J))
    grid = cfg.grid(spec, guard)
    psi0, report = _initial_state(cfg, spec)
    res = propagation_experiment(protocol, spec, cfg.solver, r_list, grid, traj_cfg=cfg.traj_config(),
                                 n_workers=threads, psi0=psi0, pure_method=cfg.pure_method)
    rows = []
    for k, t in enumerate(res.times):
        for tr in res.traces:
            rows.append([_fmt(t), str(tr.r), _fmt(tr.values[k])])
    _write_csv(out / "negativity.csv", ["time", "r", "negativity"], rows)
    speed = None
    if res.speed is not None:
        speed = {"speed": res.speed.speed, "uncertainty": res.speed.uncertainty,
                 "r_values": res.speed.r_values,
                 "v_max_formula": v_max(protocol, spec.U, spec.J)}
    _write_summary(out, "simulate", cfg, [_peak_row(r, p) for r, p in res.peaks.items()], speed,
                   _summary_diagnostics(res.diagnostics),
                   {"preparation": {"method": report.method, "fidelity": report.fidelity}})
    return 0


def cmd_scan(cfg: RunConfig, out: Path, threads: int = 1) -> int:
    if not cfg.rates:
        raise ConfigError("scan needs a non-empty rates list")
    template = cfg.spec(gamma=0.0, gamma_phi=0.0)
    _solver_cap(cfg, template)
    wall = time.perf_counter()
    protocols = cfg.protocols or [cfg.protocol]
    rows, peaks = [], []
    for protocol in protocols:
        grid = None
        if cfg.t_max is not None or cfg.dt is not None or cfg.save_stride is not None:
            spec0 = template.with_(J=template.J * (cfg.holon_hopping_factor if protocol == "holon" else 1))
            grid = cfg.grid(spec0, reflection_guard(spec0.L, cfg.r, v_max(protocol, spec0.U, spec0.J)))
        scan = scan_dissipation(protocol, template, cfg.rates, cfg.channel, grid, r=cfg.r,
                                solver=cfg.solver, holon_hopping_factor=cfg.holon_hopping_factor,
                                traj_cfg=cfg.traj_config(), n_workers=threads)
        for row in scan:
            p = row.peak
            rows.append([_fmt(row.rate), row.channel, row.protocol,
                         _fmt(p.t_peak) if p.found else "nan", _fmt(p.n_peak),
                         "0" if p.found else "1"])
            peaks.append({"rate": row.rate, "protocol": protocol, **_peak_row(cfg.r, p)})
    _write_csv(out / "peak_scan.csv",
               ["rate", "channel", "protocol", "t_peak", "n_peak", "no_peak_flag"], rows)
    _write_summary(out, "scan", cfg, peaks, None, _batch_diagnostics(cfg, wall))
    return 0


def cmd_speed(cfg: RunConfig, out: Path, threads: int = 1) -> int:
    if not cfg.u_over_j:
        raise ConfigError("speed needs a non-empty u_over_j list")
    wall = time.perf_counter()
    protocols = cfg.protocols or [cfg.protocol]
    rows, speeds, peaks = [], [], []
    for u in cfg.u_over_j:
        for protocol in protocols:
            spec = cfg.spec(U=u * cfg.J)
            _solver_cap(cfg, spec)
            c = center_site(spec)
            r_list = cfg.pairs or list(range(1, min(4, c) + 1))
            vf = v_max(protocol, spec.U, spec.J)
            grid = cfg.grid(spec, reflection_guard(spec.L, min(r_list), vf))
            res = propagation_experiment(protocol, spec, cfg.solver, r_list, grid,
                                         traj_cfg=cfg.traj_config(), n_workers=threads,
                                         pure_method=cfg.pure_method)
            sp_, unc = (res.speed.speed, res.speed.uncertainty) if res.speed else (float("nan"),) * 2
            rows.append([_fmt(u), protocol, _fmt(sp_), _fmt(unc), _fmt(vf)])
            speeds.append({"u_over_j": u, "protocol": protocol, "speed": sp_, "uncertainty": unc,
                           "v_max_formula": vf})
            peaks += [{"u_over_j": u, "protocol": protocol, **_peak_row(r, p)}
                      for r, p in res.peaks.items()]
    _write_csv(out / "speed.csv", ["u_over_j", "protocol", "speed", "uncertainty", "v_max_formula"], rows)
    _write_summary(out, "speed", cfg, peaks, speeds, _batch_diagnostics(cfg, wall))
    return 0


def cmd_tomography_check(cfg: RunConfig, out: Path, threads: int = 1) -> int:
    spec = cfg.spec()
    if spec.cutoff != 3:
        print(f"unsupported: tomography requires cutoff 3 (got {spec.cutoff})", file=sys.stderr)
        return 2
    if cfg.solver == "trajectory":
        raise ConfigError("tomography-check needs solver exact or pure")
    _solver_cap(cfg, spec)
    psi0, _ = _initial_state(cfg, spec)
    grid = cfg.grid(spec, 1.0)
    pairs = [(a, b) for a in range(spec.L) for b in range(a + 1, spec.L)]
    if cfg.solver == "exact":
        ev = evolve_master(psi0, spec, grid, store_states=True)
    else:
        ev = evolve_pure(psi0, None, grid, spec=spec, store_states=True, method=cfg.pure_method)
    worst = 0.0
    for state in ev.states:
        for a, b in pairs:
            ref = partial_trace_pair(state, a, b, spec)
            rec = tomography_reconstruct(measure_moments(state, a, b, spec))
            worst = max(worst, float(np.max(np.abs(rec - ref))))
    status = "ok" if worst <= 1e-8 else "FAILED"
    print(f"max reconstruction error {worst:.3e} over {len(pairs)} pairs and "
          f"{len(ev.states)} snapshots: {status}")
    _write_summary(out, "tomography-check", cfg, [], None, _summary_diagnostics(ev.diagnostics),
                   {"tomography_max_error": worst})
    return 0 if worst <= 1e-8 else 1


COMMANDS = {
    "simulate": cmd_simulate,
    "scan": cmd_scan,
    "speed": cmd_speed,
    "tomography-check": cmd_tomography_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="photomott", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="key = value config file")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--threads", type=int, default=1, help="worker threads for trajectories")
        p.add_argument("--seed", type=int, help="master seed (overrides master_seed)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.from_file(args.config)
        if args.seed is not None:
            cfg.master_seed = args.seed
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        out = Path(args.out or cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        wall = time.perf_counter()
        code = COMMANDS[args.command](cfg, out, args.threads)
        log.info("%s finished in %.1f s", args.command, time.perf_counter() - wall)
        return code
    except (ConfigError, DimensionError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
