"""Binary dumps, CSV writers and run manifests.

Binary layout: a 32-byte little-endian header (8-byte magic, uint64 n,
float64 extent, float64 delta_z) followed by row-major float64 data; complex
fields store interleaved (re, im) pairs.
"""
from __future__ import annotations

import csv
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .grid import TransverseGrid

HEADER = struct.Struct("<8sQdd")
SCREEN_MAGIC = b"PTRSCRN1"
FIELD_MAGIC = b"PTRFLD01"


def _atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def write_screen(path, values: np.ndarray, grid: TransverseGrid, delta_z: float) -> None:
    v = np.ascontiguousarray(values, dtype="<f8")
    _atomic_write_bytes(path, HEADER.pack(SCREEN_MAGIC, grid.n, grid.extent, delta_z) + v.tobytes())


def write_field(path, values: np.ndarray, grid: TransverseGrid, delta_z: float = 0.0) -> None:
    v = np.ascontiguousarray(values, dtype="<c16")
    _atomic_write_bytes(path, HEADER.pack(FIELD_MAGIC, grid.n, grid.extent, delta_z) + v.tobytes())


def read_dump(path) -> tuple[np.ndarray, TransverseGrid, float]:
    raw = Path(path).read_bytes()
    magic, n, extent, dz = HEADER.unpack_from(raw)
    if magic == SCREEN_MAGIC:
        dtype = "<f8"
    elif magic == FIELD_MAGIC:
        dtype = "<c16"
    else:
        raise ValueError(f"{path}: unknown dump magic {magic!r}")
    data = np.frombuffer(raw, dtype=dtype, offset=HEADER.size)
    if data.size != n * n:
        raise ValueError(f"{path}: expected {n * n} values, found {data.size}")
    return data.reshape(n, n).astype(dtype[1:]), TransverseGrid(int(n), extent), dz


def _fmt(v: float) -> str:
    return repr(float(v))


def write_rows(path, header: list[str], rows) -> None:
    """CSV with '.' decimals regardless of locale (floats go through repr)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="ascii") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(c) if isinstance(c, (float, np.floating)) else c for c in r])
    os.replace(tmp, path)


def field_rows(values: np.ndarray, grid: TransverseGrid, center=(0.0, 0.0)):
    """Cross-sections through ``center`` along x1 then x2."""
    i, j = grid.index_of(np.asarray(center, float))
    for a in range(grid.n):
        u = values[a, j]
        yield float(grid.x[a]), float(grid.x[j]), u.real, u.imag, abs(u) ** 2
    for b in range(grid.n):
        u = values[i, b]
        yield float(grid.x[i]), float(grid.x[b]), u.real, u.imag, abs(u) ** 2


def write_field_csv(path, values, grid, center=(0.0, 0.0)) -> None:
    write_rows(path, ["x1", "x2", "re", "im", "abs2"], field_rows(values, grid, center))


MOMENT_HEADER = ["quantity", "x1", "x2", "h1", "h2", "re", "im", "est_error"]
REPORT_HEADER = ["quantity", "mc_value", "prediction", "rel_err", "z_score", "pass"]


def write_report(path, report) -> None:
    write_rows(path, REPORT_HEADER, ((r.quantity, float(r.mc_value), float(r.prediction), float(r.rel_err),
                                      float(r.z_score), "true" if r.passed else "false")
                                     for r in report.rows))


def read_points(path) -> tuple[np.ndarray, np.ndarray]:
    """Points file: CSV rows b1, b2, weight; '#' comments and a header row are allowed."""
    pts, w = [], []
    with open(path, newline="") as f:
        for row in csv.reader(f):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError:
                if not pts:
                    continue    # header
                raise
            if len(vals) not in (2, 3):
                raise ValueError(f"{path}: expected b1, b2[, weight], got {row}")
            pts.append(vals[:2])
            w.append(vals[2] if len(vals) == 3 else 1.0)
    if not pts:
        raise ValueError(f"{path}: no points")
    return np.array(pts), np.array(w)


def write_json_atomic(path, obj) -> None:
    _atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())
