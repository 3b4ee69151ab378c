"""Run configuration files.

A run is described by one YAML document::

    grid:    {N: 32, L: 6.283185307179586}
    scheme:  {dt: 0.001, scheme: imex_rk2, constraint: renormalize,
              gl_epsilon: null, model: full, overflow_guard: 1.0e6}
    initial: {preset: small_director_perturbation, params: {amplitude: 0.02}}
             # or {snapshot: path/to/state.bin, mollifier_width: 0.1}
    t_end: 0.5
    save_every: 10        # steps between ledger rows
    snapshot_every: 0     # ledger rows between snapshots (0: first and last only)
    seed: 0
    ledger:   {uloc_radius: null, center_stride: 2}
    monitors: {uloc_radius: 1.0, eps0: 0.5, center_stride: 2,
               cylinders: [{center_x: [3.1, 3.1, 3.1], center_t: 0.5, radius: 0.5}]}
    output: runs/example

Only ``scheme.dt`` and ``t_end`` are mandatory.  Every problem is reported as
:class:`ConfigInvalid` carrying the dotted field name.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .dynamics import CONSTRAINTS, MODELS, SCHEMES, SchemeConfig
from .errors import ConfigInvalid
from .grid import PRESETS

_TOP_KEYS = {
    "grid", "scheme", "initial", "t_end", "save_every", "snapshot_every",
    "seed", "ledger", "monitors", "output",
}


@dataclass(frozen=True)
class GridSpec:
    N: int = 32
    L: float = 2 * math.pi


@dataclass(frozen=True)
class InitialSpec:
    preset: Optional[str] = "small_director_perturbation"
    params: dict = field(default_factory=dict)
    snapshot: Optional[str] = None
    mollifier_width: float = 0.0


@dataclass(frozen=True)
class CylinderSpec:
    center_x: tuple
    center_t: float
    radius: float


@dataclass(frozen=True)
class MonitorSpec:
    uloc_radius: Optional[float] = None
    eps0: Optional[float] = None
    center_stride: int = 2
    cylinders: tuple = ()


@dataclass(frozen=True)
class LedgerSpec:
    uloc_radius: Optional[float] = None
    center_stride: int = 2


@dataclass(frozen=True)
class RunConfig:
    grid: GridSpec
    scheme: SchemeConfig
    initial: InitialSpec
    t_end: float
    save_every: int = 1
    snapshot_every: int = 0
    seed: int = 0
    ledger: LedgerSpec = LedgerSpec()
    monitors: MonitorSpec = MonitorSpec()
    output: Optional[str] = None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["monitors"]["cylinders"] = [
            {"center_x": list(c["center_x"]), "center_t": c["center_t"], "radius": c["radius"]}
            for c in out["monitors"]["cylinders"]
        ]
        return out


def _section(raw, name):
    val = raw.get(name, {})
    if val is None:
        return {}
    if not isinstance(val, dict):
        raise ConfigInvalid(f"{name}: expected a mapping", field=name)
    return dict(val)


def _unknown(keys, allowed, prefix):
    extra = sorted(set(keys) - set(allowed))
    if extra:
        where = f"{prefix}.{extra[0]}" if prefix else extra[0]
        raise ConfigInvalid(f"{where}: unknown key", field=where)


def _number(val, name, positive=False, nonneg=False, integer=False):
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigInvalid(f"{name}: expected a number, got {val!r}", field=name)
    if integer and int(val) != val:
        raise ConfigInvalid(f"{name}: expected an integer, got {val!r}", field=name)
    if not math.isfinite(val):
        raise ConfigInvalid(f"{name}: must be finite", field=name)
    if positive and not val > 0:
        raise ConfigInvalid(f"{name}: must be positive, got {val!r}", field=name)
    if nonneg and val < 0:
        raise ConfigInvalid(f"{name}: must be nonnegative, got {val!r}", field=name)
    return int(val) if integer else float(val)


def _choice(val, name, options):
    if val not in options:
        raise ConfigInvalid(f"{name}: must be one of {', '.join(options)}; got {val!r}", field=name)
    return val


def parse_config(raw, base_dir: Optional[Path] = None) -> RunConfig:
    """Validate a mapping (already parsed from YAML) into a :class:`RunConfig`."""
    if not isinstance(raw, dict):
        raise ConfigInvalid("config root must be a mapping")
    _unknown(raw, _TOP_KEYS, "")

    g = _section(raw, "grid")
    _unknown(g, {"N", "L"}, "grid")
    n = _number(g.get("N", 32), "grid.N", positive=True, integer=True)
    if n < 4 or n % 2:
        raise ConfigInvalid("grid.N: must be an even integer >= 4", field="grid.N")
    grid = GridSpec(n, _number(g.get("L", 2 * math.pi), "grid.L", positive=True))

    s = _section(raw, "scheme")
    _unknown(s, {"dt", "scheme", "constraint", "gl_epsilon", "model", "overflow_guard", "nu", "lam", "gamma"}, "scheme")
    if "dt" not in s:
        raise ConfigInvalid("scheme.dt: required field 'dt' is missing", field="scheme.dt")
    kw = {"dt": _number(s["dt"], "scheme.dt", positive=True)}
    kw["scheme"] = _choice(s.get("scheme", "imex_rk2"), "scheme.scheme", SCHEMES)
    kw["constraint"] = _choice(s.get("constraint", "renormalize"), "scheme.constraint", CONSTRAINTS)
    kw["model"] = _choice(s.get("model", "full"), "scheme.model", MODELS)
    eps = s.get("gl_epsilon")
    if kw["constraint"] == "ginzburg_landau":
        if eps is None:
            raise ConfigInvalid("scheme.gl_epsilon: required for ginzburg_landau", field="scheme.gl_epsilon")
        kw["gl_epsilon"] = _number(eps, "scheme.gl_epsilon", positive=True)
    elif eps is not None:
        raise ConfigInvalid("scheme.gl_epsilon: only allowed with ginzburg_landau", field="scheme.gl_epsilon")
    for key in ("overflow_guard", "nu", "lam", "gamma"):
        if key in s:
            kw[key] = _number(s[key], f"scheme.{key}", positive=True)
    scheme = SchemeConfig(**kw)

    i = _section(raw, "initial")
    _unknown(i, {"preset", "params", "snapshot", "mollifier_width"}, "initial")
    snapshot = i.get("snapshot")
    params = i.get("params") or {}
    if not isinstance(params, dict):
        raise ConfigInvalid("initial.params: expected a mapping", field="initial.params")
    width = _number(i.get("mollifier_width", 0.0), "initial.mollifier_width", nonneg=True)
    if snapshot is not None:
        if "preset" in i:
            raise ConfigInvalid("initial: give either preset or snapshot, not both", field="initial.snapshot")
        path = Path(snapshot)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        if not path.is_file():
            raise ConfigInvalid(f"initial.snapshot: file not readable: {path}", field="initial.snapshot")
        initial = InitialSpec(None, {}, str(path), width)
    else:
        preset = _choice(i.get("preset", "small_director_perturbation"), "initial.preset", PRESETS)
        initial = InitialSpec(preset, dict(params), None, width)

    if "t_end" not in raw:
        raise ConfigInvalid("t_end: required field 't_end' is missing", field="t_end")
    t_end = _number(raw["t_end"], "t_end", nonneg=True)
    save_every = _number(raw.get("save_every", 1), "save_every", positive=True, integer=True)
    snapshot_every = _number(raw.get("snapshot_every", 0), "snapshot_every", nonneg=True, integer=True)
    seed = _number(raw.get("seed", 0), "seed", nonneg=True, integer=True)

    lg = _section(raw, "ledger")
    _unknown(lg, {"uloc_radius", "center_stride"}, "ledger")
    lr = lg.get("uloc_radius")
    ledger = LedgerSpec(
        None if lr is None else _number(lr, "ledger.uloc_radius", positive=True),
        _number(lg.get("center_stride", 2), "ledger.center_stride", positive=True, integer=True),
    )

    m = _section(raw, "monitors")
    _unknown(m, {"uloc_radius", "eps0", "center_stride", "cylinders"}, "monitors")
    mr, me = m.get("uloc_radius"), m.get("eps0")
    if (mr is None) != (me is None):
        raise ConfigInvalid("monitors: uloc_radius and eps0 must be given together", field="monitors.eps0")
    cyls = []
    for k, c in enumerate(m.get("cylinders") or []):
        name = f"monitors.cylinders[{k}]"
        if not isinstance(c, dict):
            raise ConfigInvalid(f"{name}: expected a mapping", field=name)
        _unknown(c, {"center_x", "center_t", "radius"}, name)
        cx = c.get("center_x")
        if not isinstance(cx, (list, tuple)) or len(cx) != 3:
            raise ConfigInvalid(f"{name}.center_x: expected three numbers", field=f"{name}.center_x")
        cyls.append(
            CylinderSpec(
                tuple(_number(v, f"{name}.center_x") for v in cx),
                _number(c.get("center_t"), f"{name}.center_t", nonneg=True),
                _number(c.get("radius"), f"{name}.radius", positive=True),
            )
        )
    monitors = MonitorSpec(
        None if mr is None else _number(mr, "monitors.uloc_radius", positive=True),
        None if me is None else _number(me, "monitors.eps0", positive=True),
        _number(m.get("center_stride", 2), "monitors.center_stride", positive=True, integer=True),
        tuple(cyls),
    )
    for name, r in (("ledger.uloc_radius", ledger.uloc_radius), ("monitors.uloc_radius", monitors.uloc_radius)):
        if r is not None and r > grid.L / 2:
            raise ConfigInvalid(f"{name}: radius {r} exceeds L/2", field=name)

    out = raw.get("output")
    if out is not None and not isinstance(out, str):
        raise ConfigInvalid("output: expected a path string", field="output")
    return RunConfig(grid, scheme, initial, t_end, save_every, snapshot_every, seed, ledger, monitors, out)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigInvalid(f"{path}: cannot read config ({exc.strerror})") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigInvalid(f"{path}: YAML syntax error{where}") from exc
    return parse_config(raw if raw is not None else {}, base_dir=path.parent)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
