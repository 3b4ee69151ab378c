"""Command-line driver: ``nflab simulate | diagnose | scaling-test | sweep``.

Exit codes: 0 success, 1 configuration or I/O error, 2 blow-up detected.
"""
from __future__ import annotations

import argparse
import copy
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np
import scipy.fft
import yaml

from . import analysis, io, scaling
from .config import RunConfig, dump_config, load_config, parse_config
from .dynamics import Trajectory, simulate
from .errors import BlowUpDetected, ConfigInvalid, FileCorrupt, NflabError, UnknownDiagnostic
from .grid import FlowState, PeriodicGrid, build_smooth_initial_data, gaussian_bump, preset_field

log = logging.getLogger("nflab")

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP = 0, 1, 2
SWEEP_AXES = ("amplitude", "gl_epsilon", "dt", "N")
E3_SLACK = 1e-6


# --- building runs -----------------------------------------------------------------


def initial_state(cfg: RunConfig) -> FlowState:
    grid = PeriodicGrid(cfg.grid.N, cfg.grid.L)
    init = cfg.initial
    if init.snapshot is not None:
        state = io.read_state(init.snapshot)
        if state.grid != grid:
            raise ConfigInvalid(
                f"initial.snapshot: grid (N={state.grid.n}, L={state.grid.length}) differs from grid section",
                field="initial.snapshot",
            )
        if init.mollifier_width > 0:
            u, d = build_smooth_initial_data(state.velocity, state.director, grid, init.mollifier_width)
            state = state.replace(velocity=u, director=d)
        return state
    params = {"seed": cfg.seed, **init.params}
    state = preset_field(init.preset, grid, **params)
    if init.mollifier_width > 0:
        u, d = build_smooth_initial_data(state.velocity, state.director, grid, init.mollifier_width)
        state = state.replace(velocity=u, director=d)
    return state


def ledger_params(cfg: RunConfig) -> analysis.UlocParams:
    radius = cfg.ledger.uloc_radius or 0.25 * cfg.grid.L
    return analysis.UlocParams(radius, cfg.ledger.center_stride, method="fft")


def monitors(cfg: RunConfig):
    m = cfg.monitors
    if m.uloc_radius is None:
        return []
    return [analysis.BlowupMonitor(m.uloc_radius, m.eps0, m.center_stride)]


def run_config(cfg: RunConfig) -> Trajectory:
    return simulate(
        initial_state(cfg),
        cfg.scheme,
        cfg.t_end,
        save_every=cfg.save_every,
        monitors=monitors(cfg),
        keep_states=cfg.snapshot_every,
        ledger_params=ledger_params(cfg),
    )


def write_run(out: Path, cfg: RunConfig, traj: Trajectory, blowup=None):
    """Ledger CSV, state snapshots, monitor events, cylinder report and resolved config."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.yaml").write_text(dump_config(cfg))
    io.write_ledger(out / "ledger.csv", traj.ledger)
    snap_dir = out / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    for old in snap_dir.glob("state_*.bin"):
        old.unlink()
    for k, s in enumerate(traj.states):
        io.write_state(snap_dir / f"state_{k:06d}.bin", s)
    events = [e.as_dict() for e in traj.events]
    if blowup is not None:
        events.append({"kind": "blowup_detected", "time": blowup.time, "message": str(blowup)})
    io.write_json(out / "events.json", {"events": events})
    cyl_rows = []
    for c in cfg.monitors.cylinders:
        cyl = analysis.Cylinder(c.center_x, c.center_t, c.radius)
        try:
            q = analysis.cylinder_quantities(traj, cyl).as_dict()
            cyl_rows.append({"center_x": list(c.center_x), "center_t": c.center_t, "radius": c.radius, **q})
        except NflabError as exc:
            cyl_rows.append({"center_x": list(c.center_x), "center_t": c.center_t, "radius": c.radius, "error": str(exc)})
    if cyl_rows:
        io.write_json(out / "cylinders.json", {"cylinders": cyl_rows})


def load_run(path) -> Trajectory:
    """Rebuild a trajectory from a ``simulate`` output directory."""
    path = Path(path)
    cfg = load_config(path / "config.resolved.yaml")
    ledger = io.read_ledger(path / "ledger.csv")
    snaps = sorted((path / "snapshots").glob("state_*.bin"))
    if not snaps:
        raise FileCorrupt(f"{path}: no state snapshots")
    states = tuple(io.read_state(p) for p in snaps)
    return Trajectory(states, ledger, cfg.scheme)


# --- subcommands ---------------------------------------------------------------------


def _resolve_out(args, cfg: RunConfig) -> Path:
    return Path(args.out or cfg.output or "nflab_out")


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    out = _resolve_out(args, cfg)
    try:
        traj = run_config(cfg)
    except BlowUpDetected as exc:
        log.error("%s", exc)
        partial = exc.trajectory
        if partial is not None:
            write_run(out, cfg, partial, blowup=exc)
        return EXIT_BLOWUP
    write_run(out, cfg, traj)
    log.info("wrote %d ledger rows and %d snapshots to %s", len(traj.ledger), len(traj.states), out)
    return EXIT_OK


def _load_input(path):
    """A run directory gives a trajectory; a snapshot file gives its raw data."""
    path = Path(path)
    if path.is_dir():
        return "trajectory", load_run(path)
    if not path.is_file():
        raise FileCorrupt(f"{path}: no such file or directory")
    data, grid, time, kind = io.read_snapshot(path)
    if kind == "state":
        return "trajectory", _single_state_traj(io.read_state(path))
    return "field", (data, grid, time, kind)


def _single_state_traj(state):
    from .dynamics import SchemeConfig
    from .grid import EnergyLedger

    ledger = EnergyLedger()
    ledger.append(analysis.ledger_entry(state))
    return Trajectory((state,), ledger, SchemeConfig(dt=1.0))


def _uloc_params(p, grid):
    return analysis.UlocParams(
        float(p.get("radius", 0.25 * grid.length)),
        int(p.get("center_stride", 2)),
        p.get("method", "auto"),
        p.get("mask", "sharp"),
    )


def _diag_energy(kind, obj, p):
    traj = _require_traj(kind, obj, "energy")
    rows = [
        {"time": s.time, "E2": analysis.energy_l2(s), "E3": analysis.energy_l3(s), "dissipation": analysis.dissipation(s)}
        for s in traj.states
    ]
    return {"diagnostic": "energy", "rows": rows}


def _diag_uloc(kind, obj, p):
    if kind == "field":
        data, grid, time, fkind = obj
        field = data[0] if data.shape[0] == 1 else data
        params = _uloc_params(p, grid)
        value, center = analysis.uloc_norm_detail(field, grid, params)
        rows = [{"time": time, "value": value, "center": center}]
    else:
        grid = obj.grid
        params = _uloc_params(p, grid)
        rows = []
        for s in obj.states:
            value, center = analysis.uloc_norm_detail(analysis.l3_density(s), grid, params, density=True)
            rows.append({"time": s.time, "value": value, "center": center})
    return {"diagnostic": "uloc", "params": params.__dict__, "N": grid.n, "L": grid.length, "rows": rows}


def _require_traj(kind, obj, name):
    if kind != "trajectory":
        raise UnknownDiagnostic(f"diagnostic {name!r} needs a state snapshot or run directory")
    return obj


def _diag_cylinder(kind, obj, p):
    traj = _require_traj(kind, obj, "cylinder")
    cyls = p.get("cylinders") or [p]
    rows = []
    for c in cyls:
        cyl = analysis.Cylinder(tuple(c["center_x"]), float(c["center_t"]), float(c["radius"]))
        rows.append({"center_x": list(cyl.center_x), "center_t": cyl.center_t, "radius": cyl.radius,
                     **analysis.cylinder_quantities(traj, cyl).as_dict()})
    return {"diagnostic": "cylinder", "N": traj.grid.n, "L": traj.grid.length, "cylinders": rows}


def _diag_balance(kind, obj, p):
    traj = _require_traj(kind, obj, "balance")
    res = analysis.energy_l2_balance(traj)
    e20 = traj.ledger.column("E2")[0]
    return {"diagnostic": "balance", "time": traj.ledger.times, "residual": res,
            "max_relative": float(np.max(np.abs(res)) / e20) if e20 else 0.0}


def _diag_morrey(kind, obj, p):
    traj = _require_traj(kind, obj, "morrey")
    field = p.get("field", "velocity")
    if field == "velocity":
        data = np.stack([s.velocity for s in traj.states])
    elif field == "director_gradient":
        data = np.stack([analysis.director_gradient(s).reshape((9,) + s.grid.shape) for s in traj.states])
    elif field == "pressure":
        data = np.stack([s.pressure for s in traj.states])
    else:
        raise UnknownDiagnostic(f"unknown Morrey field {field!r}")
    params = analysis.MorreyParams(
        float(p.get("p", 3.0)), float(p.get("lam", 0.0)), tuple(p.get("radii", [0.25 * traj.grid.length])),
        int(p.get("center_stride", 2)), int(p.get("time_stride", 1)),
    )
    res = analysis.morrey_norm_detail(traj.times, data, traj.grid, params)
    return {"diagnostic": "morrey", "field": field, "params": params.__dict__, "value": res.value,
            "center_x": res.center_x, "center_t": res.center_t, "radius": res.radius,
            "per_radius": res.per_radius}


def _diag_blowup(kind, obj, p):
    traj = _require_traj(kind, obj, "blowup")
    ev = analysis.blowup_monitor(traj.states, float(p["radius"]), float(p["eps0"]), int(p.get("center_stride", 2)))
    return {"diagnostic": "blowup", "event": None if ev is None else ev.as_dict()}


def _diag_decay(kind, obj, p):
    traj = _require_traj(kind, obj, "decay")
    fit = analysis.decay_fit(traj, int(p.get("m", 0)), p.get("t_min"))
    return {"diagnostic": "decay", **fit.as_dict()}


def _diag_local_energy(kind, obj, p):
    traj = _require_traj(kind, obj, "local_energy")
    grid = traj.grid
    center = tuple(p.get("center", [0.5 * grid.length] * 3))
    width = float(p.get("width", 0.15 * grid.length))
    t0 = traj.times[0]
    t_full = float(p.get("t_full", t0 + 0.5 * (traj.times[-1] - t0)))
    eta, deta = analysis.temporal_ramp(t0, t_full)
    phi = analysis.TestFunction.separable(gaussian_bump(grid, center, width), eta, deta)
    terms = analysis.local_energy_terms(traj, phi, p.get("t"))
    return {"diagnostic": "local_energy", **terms.__dict__, "residual": terms.residual}


DIAGNOSTICS = {
    "energy": _diag_energy,
    "uloc": _diag_uloc,
    "cylinder": _diag_cylinder,
    "balance": _diag_balance,
    "morrey": _diag_morrey,
    "blowup": _diag_blowup,
    "decay": _diag_decay,
    "local_energy": _diag_local_energy,
}


def _parse_settings(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigInvalid(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        out[key.strip()] = yaml.safe_load(val)
    return out


def cmd_diagnose(args) -> int:
    if args.diagnostic not in DIAGNOSTICS:
        raise UnknownDiagnostic(f"unknown diagnostic {args.diagnostic!r}; known: {', '.join(DIAGNOSTICS)}")
    params = {}
    if args.config:
        spec = yaml.safe_load(Path(args.config).read_text()) or {}
        if not isinstance(spec, dict):
            raise ConfigInvalid(f"{args.config}: diagnostic spec must be a mapping")
        params.update(spec)
    params.update(_parse_settings(args.set))
    kind, obj = _load_input(args.input)
    report = DIAGNOSTICS[args.diagnostic](kind, obj, params)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / f"diagnose_{args.diagnostic}.json", report)
    return EXIT_OK


def cmd_scaling_test(args) -> int:
    cfg = load_config(args.config)
    out = _resolve_out(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    traj = run_config(cfg)
    cylinders = [analysis.Cylinder(c.center_x, c.center_t, c.radius) for c in cfg.monitors.cylinders]
    reports, summary = [], []
    for lam in args.lambdas:
        try:
            spec = scaling.RescaleSpec(lam, args.regrid)
            rep = scaling.invariance_report(traj, spec, cylinders).as_dict()
            reports.append(rep)
            devs = [q["rel_dev"] for q in rep["quantities"]]
            summary.append({"lambda": lam, "status": "ok", "max_rel_dev": max(devs, default=0.0)})
        except NflabError as exc:
            reports.append({"lambda": lam, "error": str(exc)})
            summary.append({"lambda": lam, "status": "error", "max_rel_dev": None, "error": str(exc)})
    io.write_json(out / "scaling_report.json", {"reports": reports, "summary": summary})
    for row in summary:
        log.info("lambda=%s %s max_rel_dev=%s", row["lambda"], row["status"], row["max_rel_dev"])
    return EXIT_OK


def _sweep_member(raw: dict, axis: str, value):
    raw = copy.deepcopy(raw)
    if axis == "amplitude":
        init = raw.setdefault("initial", {}) or {}
        raw["initial"] = init
        init.setdefault("params", {})
        init["params"] = dict(init["params"] or {}, amplitude=value)
    elif axis == "gl_epsilon":
        sch = raw.setdefault("scheme", {})
        sch["constraint"] = "ginzburg_landau"
        sch["gl_epsilon"] = value
    elif axis == "dt":
        raw.setdefault("scheme", {})["dt"] = value
    elif axis == "N":
        raw.setdefault("grid", {})["N"] = value
    return raw


SWEEP_COLUMNS = ("value", "status", "blowup_time", "final_E3", "max_uloc3", "E3_nonincreasing", "events", "error")


def cmd_sweep(args) -> int:
    if not args.values:
        raise ConfigInvalid("sweep: --values must list at least one value", field="values")
    base_path = Path(args.config)
    try:
        raw = yaml.safe_load(base_path.read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigInvalid(f"{base_path}: cannot load base config ({exc})") from exc
    base = parse_config(raw, base_dir=base_path.parent)
    out = _resolve_out(args, base)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for k, value in enumerate(args.values):
        value = int(value) if args.axis == "N" else float(value)
        member_dir = out / f"run_{k:03d}"
        row = {c: "" for c in SWEEP_COLUMNS}
        row["value"] = value
        try:
            cfg = parse_config(_sweep_member(raw, args.axis, value), base_dir=base_path.parent)
            try:
                traj = run_config(cfg)
                row["status"] = "completed"
            except BlowUpDetected as exc:
                traj = exc.trajectory
                row["status"] = "blew_up"
                row["blowup_time"] = exc.time
                if traj is not None:
                    write_run(member_dir, cfg, traj, blowup=exc)
            else:
                write_run(member_dir, cfg, traj)
            if traj is not None and len(traj.ledger):
                e3 = traj.ledger.column("E3")
                row["final_E3"] = e3[-1]
                row["max_uloc3"] = float(np.max(traj.ledger.column("uloc3")))
                row["E3_nonincreasing"] = bool(np.all(np.diff(e3) <= E3_SLACK * e3[0]))
                row["events"] = ";".join(f"{e.kind}@{e.time:.6g}" for e in traj.events)
        except (NflabError, ValueError) as exc:
            row["status"] = "failed"
            row["error"] = str(exc)
        rows.append(row)
        log.info("sweep %s=%s: %s", args.axis, value, row["status"])
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (format(v, ".17g") if isinstance(v, float) else v) for k, v in row.items()})
    return EXIT_OK


# --- entry point -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--threads", type=int, metavar="N", help="FFT worker threads (default: $NFLAB_THREADS or 1)")
    common.add_argument("--quiet", action="store_true", help="only report warnings and errors")

    parser = argparse.ArgumentParser(prog="nflab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="run one configuration")
    p.add_argument("--config", required=True, metavar="PATH")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("diagnose", parents=[common], help="evaluate a diagnostic on stored output")
    p.add_argument("--input", required=True, metavar="PATH", help="snapshot file or simulate output directory")
    p.add_argument("--diagnostic", required=True, help=", ".join(DIAGNOSTICS))
    p.add_argument("--config", metavar="PATH", help="YAML mapping of diagnostic parameters")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="diagnostic parameter (YAML value)")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("scaling-test", parents=[common], help="parabolic-scaling invariance reports")
    p.add_argument("--config", required=True, metavar="PATH")
    p.add_argument("--lambdas", type=float, nargs="+", required=True, metavar="LAMBDA")
    p.add_argument("--regrid", choices=scaling.REGRIDS, default="exact_integer")
    p.set_defaults(func=cmd_scaling_test)

    p = sub.add_parser("sweep", parents=[common], help="stability map over one parameter")
    p.add_argument("--config", required=True, metavar="PATH", help="base configuration")
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", nargs="*", default=[], metavar="V")
    p.set_defaults(func=cmd_sweep)
    return parser


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("NFLAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigInvalid(f"NFLAB_THREADS must be an integer, got {env!r}")
    return 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        with scipy.fft.set_workers(_threads(args)):
            return args.func(args)
    except (NflabError, OSError) as exc:
        print(f"nflab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (KeyError, TypeError, ValueError) as exc:
        print(f"nflab: error: invalid parameter ({exc})", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
