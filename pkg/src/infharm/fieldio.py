"""CSV field files and JSON reports.

Field files start with a ``# format_version: N`` comment, then a header
(``x,value``, ``x,y,value`` or ``x1,...,xd,value``) and one row per node in
node order.  Floats are written with 17 significant digits, enough to
reproduce every double exactly, so export -> import -> export is
byte-identical.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import ConfigError, GridError, NonFiniteError
from .grid import Grid

FORMAT_VERSION = 1


def fmt(v: float) -> str:
    return format(float(v), ".17g")


def coord_names(dim: int) -> list:
    if dim == 1:
        return ["x"]
    if dim == 2:
        return ["x", "y"]
    return [f"x{i + 1}" for i in range(dim)]


def field_lines(grid: Grid, u, nodes=None) -> list:
    u = np.asarray(u, dtype=float)
    nodes = np.arange(grid.n_nodes) if nodes is None else np.asarray(nodes)
    lines = [f"# format_version: {FORMAT_VERSION}", ",".join(coord_names(grid.dim) + ["value"])]
    for k in nodes:
        lines.append(",".join([fmt(c) for c in grid.coords[k]] + [fmt(u[k])]))
    return lines


def write_field(path, grid: Grid, u, nodes=None) -> Path:
    """Write node values (all nodes, or ``nodes`` only) as CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(field_lines(grid, u, nodes)) + "\n")
    return path


def _read_rows(path, dim: int):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"field file {str(path)!r} does not exist", key="field")
    text = path.read_text().splitlines()
    version = None
    rows = []
    header = None
    for line in text:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            if key.strip() == "format_version":
                version = int(val)
            continue
        if header is None:
            header = [c.strip() for c in line.split(",")]
            continue
        rows.append([float(c) for c in line.split(",")])
    if version is not None and version != FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported format_version {version}", key="format_version")
    expect = coord_names(dim) + ["value"]
    if header != expect:
        raise ConfigError(f"{path}: header {header} does not match {expect}", key="field")
    arr = np.array(rows, dtype=float).reshape(-1, dim + 1)
    return arr[:, :dim], arr[:, dim]


def _match(grid: Grid, pts, path):
    try:
        return np.array([grid.node_at(p) for p in pts], dtype=np.int64)
    except GridError as exc:
        raise ConfigError(f"{path}: {exc}", key="field") from None


def read_field(path, grid: Grid) -> np.ndarray:
    """Read a field file written for ``grid``; every node must appear once."""
    pts, vals = _read_rows(path, grid.dim)
    nodes = _match(grid, pts, path)
    if nodes.size != grid.n_nodes or np.unique(nodes).size != grid.n_nodes:
        raise ConfigError(f"{path}: expected one row per grid node ({grid.n_nodes}), got {nodes.size}", key="field")
    if not np.all(np.isfinite(vals)):
        raise NonFiniteError(f"{path}: non-finite values")
    u = np.empty(grid.n_nodes)
    u[nodes] = vals
    return u


def read_boundary_table(path, grid: Grid) -> np.ndarray:
    """Boundary values aligned with ``grid.boundary_idx`` from a CSV table."""
    pts, vals = _read_rows(path, grid.dim)
    nodes = _match(grid, pts, path)
    pos = np.full(grid.n_nodes, -1)
    pos[grid.boundary_idx] = np.arange(grid.boundary_idx.size)
    k = pos[nodes]
    if np.any(k < 0):
        bad = nodes[k < 0][0]
        raise ConfigError(f"{path}: node {grid.coords[bad].tolist()} is not a boundary node", key="boundary.table")
    if np.unique(k).size != k.size or k.size != grid.boundary_idx.size:
        raise ConfigError(f"{path}: every boundary node must appear exactly once", key="boundary.table")
    out = np.empty(grid.boundary_idx.size)
    out[k] = vals
    return out


def write_table(path, header, rows) -> Path:
    """Generic CSV with the format_version comment; floats at 17 digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = [f"# format_version: {FORMAT_VERSION}", ",".join(header)]
    for row in rows:
        out.append(",".join(fmt(v) if isinstance(v, float) else str(v) for v in row))
    path.write_text("\n".join(out) + "\n")
    return path


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, obj) -> Path:
    """Deterministic JSON: sorted keys, non-finite floats as null."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = dict(_clean(obj))
    doc.setdefault("format_version", FORMAT_VERSION)
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return path
