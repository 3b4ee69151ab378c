"""Snapshot, ledger and report persistence.

Snapshot layout (little endian)::

    magic   6 bytes   b"NFLAB1"
    N       uint32
    L       float64
    time    float64
    kind    16 bytes  ASCII, NUL padded ("state", "scalar", "vector", "spectral", ...)
    ncomp   uint32
    data    float64 * ncomp * N^3, row-major, component-major

``state`` snapshots hold seven components ``u_x, u_y, u_z, d_x, d_y, d_z, P``.
``spectral`` snapshots store the rfft coefficients of ``ncomp / 2`` fields as
interleaved ``(re, im)`` pairs over the ``N x N x (N/2 + 1)`` half-spectrum.
"""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FileCorrupt
from .grid import EnergyLedger, FlowState, LedgerEntry, PeriodicGrid

MAGIC = b"NFLAB1"
_HEADER = struct.Struct("<6sIdd16sI")
LEDGER_COLUMNS = ("time", "E2", "E3", "dissipation", "uloc3", "sup_grad_u_m0", "sup_grad_u_m1", "sup_grad_u_m2")


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_snapshot(path, data, grid: PeriodicGrid, time: float, kind: str):
    """Write ``data`` of shape ``(ncomp, ...)`` under the snapshot header."""
    data = np.asarray(data)
    if kind == "spectral":
        data = np.stack([data.real, data.imag], axis=-1)
    data = np.ascontiguousarray(data, dtype="<f8")
    per = grid.n**3 if kind != "spectral" else grid.n * grid.n * (grid.n // 2 + 1) * 2
    ncomp = data.size // per
    if ncomp * per != data.size:
        raise ValueError("data size does not match the grid")
    if kind == "spectral":
        ncomp *= 2
    header = _HEADER.pack(MAGIC, grid.n, float(grid.length), float(time), kind.encode("ascii"), ncomp)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())


def read_snapshot(path):
    """Return ``(data, grid, time, kind)``; raises :class:`FileCorrupt` on any mismatch."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FileCorrupt(f"{path}: truncated header")
    magic, n, length, time, kind, ncomp = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FileCorrupt(f"{path}: bad magic {magic!r}")
    kind = kind.rstrip(b"\0").decode("ascii", errors="replace")
    try:
        grid = PeriodicGrid(n, length)
    except ValueError as exc:
        raise FileCorrupt(f"{path}: invalid grid header ({exc})") from exc
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if kind == "spectral":
        shape = (ncomp // 2, n, n, n // 2 + 1, 2)
    else:
        shape = (ncomp, n, n, n)
    if ncomp < 1 or body.size != int(np.prod(shape)):
        raise FileCorrupt(f"{path}: payload has {body.size} values, header implies {int(np.prod(shape))}")
    data = body.reshape(shape).astype(float)
    if kind == "spectral":
        data = data[..., 0] + 1j * data[..., 1]
    return data, grid, time, kind


def write_state(path, state: FlowState):
    data = np.concatenate([state.velocity, state.director, state.pressure[None]])
    write_snapshot(path, data, state.grid, state.time, "state")


def read_state(path) -> FlowState:
    data, grid, time, kind = read_snapshot(path)
    if kind != "state" or data.shape[0] != 7:
        raise FileCorrupt(f"{path}: expected a 7-component state snapshot, found kind={kind!r}")
    return FlowState(grid, data[:3].copy(), data[3:6].copy(), data[6].copy(), time)


def ledger_row(entry: LedgerEntry):
    return [_fmt(entry.time), _fmt(entry.E2), _fmt(entry.E3), _fmt(entry.dissipation), _fmt(entry.uloc3)] + [
        _fmt(v) for v in entry.grad_sup_norms
    ]


def write_ledger(path, ledger: EnergyLedger):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LEDGER_COLUMNS)
        for e in ledger.entries:
            w.writerow(ledger_row(e))


def read_ledger(path) -> EnergyLedger:
    ledger = EnergyLedger()
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or tuple(rows[0]) != LEDGER_COLUMNS:
            raise FileCorrupt(f"{path}: unexpected ledger header")
        for row in rows[1:]:
            vals = [float(v) for v in row]
            ledger.append(LedgerEntry(vals[0], vals[1], vals[2], vals[3], vals[4], tuple(vals[5:])))
    except (ValueError, IndexError) as exc:
        raise FileCorrupt(f"{path}: malformed ledger ({exc})") from exc
    return ledger


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=False)
        fh.write("\n")


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FileCorrupt(f"{path}: invalid JSON ({exc})") from exc
