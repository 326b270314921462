"""Field snapshot files.

A ``.fld`` file is a 64-byte ASCII header

    KSWAVE1 <nz> <ny> <nfields> <t> <representation>

padded with spaces and terminated by a newline, followed by each field as
row-major little-endian float64 in the representation's field order.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError
from .field_ops import PerturbState, PrimitiveState, Representation, StripGrid

MAGIC = "KSWAVE1"
HEADER_SIZE = 64
CSV_NODE_LIMIT = 1 << 16


def _header(nz, ny, nfields, t, rep):
    text = f"{MAGIC} {nz} {ny} {nfields} {t!r} {rep.value}"
    if len(text) > HEADER_SIZE - 1:
        raise FormatError("snapshot header does not fit in 64 bytes")
    return (text.ljust(HEADER_SIZE - 1) + "\n").encode("ascii")


def write_field_snapshot(path, state) -> Path:
    path = Path(path)
    rep = Representation(state.representation)
    names = rep.field_names
    fields = state.fields()
    nz, ny = state.grid.shape
    with open(path, "wb") as fh:
        fh.write(_header(nz, ny, len(names), float(state.t), rep))
        for name in names:
            fh.write(np.ascontiguousarray(fields[name], dtype="<f8").tobytes())
    return path


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read(HEADER_SIZE)
    return _parse_header(raw)


def _parse_header(raw: bytes) -> dict:
    if len(raw) != HEADER_SIZE or not raw.endswith(b"\n"):
        raise FormatError("truncated snapshot header")
    parts = raw.decode("ascii").split()
    if len(parts) != 6 or parts[0] != MAGIC:
        raise FormatError(f"bad snapshot header {raw!r}")
    try:
        rep = Representation(parts[5])
        return {"nz": int(parts[1]), "ny": int(parts[2]), "nfields": int(parts[3]),
                "t": float(parts[4]), "representation": rep}
    except ValueError as exc:
        raise FormatError(f"bad snapshot header {raw!r}") from exc


def read_field_snapshot(path, grid: StripGrid | None = None):
    """Return ``(header, fields)``, or a state object when ``grid`` is given."""
    data = Path(path).read_bytes()
    head = _parse_header(data[:HEADER_SIZE])
    rep = head["representation"]
    names = rep.field_names
    if head["nfields"] != len(names):
        raise FormatError(f"{rep.value} has {len(names)} fields, header says {head['nfields']}")
    nz, ny = head["nz"], head["ny"]
    expected = HEADER_SIZE + 8 * nz * ny * len(names)
    if len(data) != expected:
        raise FormatError(f"snapshot size {len(data)} bytes, expected {expected}")
    flat = np.frombuffer(data, dtype="<f8", offset=HEADER_SIZE).reshape(len(names), nz, ny)
    fields = {name: flat[i].astype(float) for i, name in enumerate(names)}
    if grid is None:
        return head, fields
    if grid.shape != (nz, ny):
        raise FormatError(f"snapshot grid {(nz, ny)} does not match {grid.shape}")
    if rep is Representation.PERTURB:
        return PerturbState(grid, head["t"], **fields)
    return PrimitiveState(grid, head["t"], rep, fields)


def export_fields_csv(path, state) -> Path:
    """Flat ``z,y,<fields...>`` table; only for grids up to 65536 nodes."""
    grid = state.grid
    if grid.nz * grid.ny > CSV_NODE_LIMIT:
        raise FormatError("grid too large for CSV export")
    Z, Y = grid.mesh()
    names = Representation(state.representation).field_names
    fields = state.fields()
    cols = [Z.ravel(), Y.ravel()] + [fields[n].ravel() for n in names]
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=",".join(("z", "y") + names),
               comments="", fmt="%.17g")
    return Path(path)
