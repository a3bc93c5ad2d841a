"""Lattice discretizations of bounded domains.

A :class:`Grid` lives on the uniform lattice ``lower + h * k`` inside a
bounding box.  Every lattice node is classified as interior (inside the open
domain), boundary (not interior, but adjacent to an interior node in one of
the ``3**d - 1`` lattice directions) or exterior.  Active nodes are interior
and boundary nodes; they are numbered in lexicographic order of their
coordinates (first coordinate slowest), which is also C order on the lattice.

Fields on a grid are plain float arrays of length ``grid.n_nodes`` indexed by
active node number.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import pdist

from .errors import GridError, NonFiniteError, PreconditionError

EXTERIOR, BOUNDARY, INTERIOR = 0, 1, 2

# Relative slack used when comparing lattice distances with a radius.
_RADIUS_SLACK = 1e-9


def _readonly(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Grid:
    """Immutable lattice grid with interior/boundary/exterior classification."""

    h: float
    lower: tuple
    upper: tuple
    kind: np.ndarray
    shape: dict = field(default_factory=lambda: {"type": "rectangle"})

    def __post_init__(self):
        kind = _readonly(np.array(self.kind, dtype=np.int8))
        object.__setattr__(self, "kind", kind)
        flat = kind.ravel()
        active = np.flatnonzero(flat > EXTERIOR)
        lattice_to_node = np.full(flat.size, -1, dtype=np.int64)
        lattice_to_node[active] = np.arange(active.size)
        multi = np.stack(np.unravel_index(active, kind.shape), axis=1)
        coords = np.asarray(self.lower, dtype=float) + self.h * multi
        is_interior = flat[active] == INTERIOR
        object.__setattr__(self, "active", _readonly(active))
        object.__setattr__(self, "lattice_to_node", _readonly(lattice_to_node.reshape(kind.shape)))
        object.__setattr__(self, "multi_index", _readonly(multi))
        object.__setattr__(self, "coords", _readonly(coords))
        object.__setattr__(self, "is_interior", _readonly(is_interior))
        object.__setattr__(self, "interior_idx", _readonly(np.flatnonzero(is_interior)))
        object.__setattr__(self, "boundary_idx", _readonly(np.flatnonzero(~is_interior)))
        object.__setattr__(self, "_cache", {})

    @property
    def dim(self) -> int:
        return self.kind.ndim

    @property
    def n_nodes(self) -> int:
        return int(self.active.size)

    @property
    def lattice_shape(self) -> tuple:
        return self.kind.shape

    @property
    def diameter(self) -> float:
        """Euclidean diameter of the active node set's bounding box."""
        c = self.coords
        return float(np.linalg.norm(c.max(axis=0) - c.min(axis=0)))

    def classification(self) -> np.ndarray:
        """Per-active-node kind (BOUNDARY or INTERIOR)."""
        return self.kind.ravel()[self.active]

    def node_at(self, point, tol=None) -> int:
        """Active node index whose coordinates coincide with ``point``."""
        point = np.asarray(point, dtype=float)
        k = np.rint((point - np.asarray(self.lower)) / self.h).astype(int)
        tol = 1e-6 * self.h if tol is None else tol
        if np.any(np.abs(np.asarray(self.lower) + self.h * k - point) > tol):
            raise GridError(f"point {point.tolist()} is not a lattice node")
        if np.any(k < 0) or np.any(k >= np.array(self.kind.shape)):
            raise GridError(f"point {point.tolist()} lies outside the lattice")
        node = int(self.lattice_to_node[tuple(k)])
        if node < 0:
            raise GridError(f"point {point.tolist()} is an exterior node")
        return node

    def nearest_node(self, point) -> int:
        """Active node closest to ``point`` (ties broken by smallest index)."""
        d = np.linalg.norm(self.coords - np.asarray(point, dtype=float), axis=1)
        return int(np.argmin(d))

    def stencil_offsets(self, eps: float) -> np.ndarray:
        """Integer lattice offsets k with |k| h <= eps, in lexicographic order."""
        key = ("offsets", float(eps))
        if key not in self._cache:
            if eps < self.h * (1 - _RADIUS_SLACK):
                raise GridError(
                    f"eps={eps} is smaller than the grid spacing h={self.h}; "
                    "the ball stencil would be a single node (eps >= h is required)"
                )
            r = int(math.floor(eps / self.h + _RADIUS_SLACK))
            rng = range(-r, r + 1)
            limit = (eps / self.h) ** 2 * (1 + 2 * _RADIUS_SLACK)
            offs = [k for k in itertools.product(rng, repeat=self.dim) if sum(c * c for c in k) <= limit]
            self._cache[key] = _readonly(np.array(offs, dtype=np.int64).reshape(-1, self.dim))
        return self._cache[key]

    def neighbor_table(self, eps: float) -> np.ndarray:
        """Clipped ball stencils of every interior node.

        Row ``i`` lists, for interior node ``interior_idx[i]``, the active node
        reached by each offset of :meth:`stencil_offsets`.  Offsets that leave
        the closed domain map to the node itself, which never changes a max or
        min over the ball because the centre is always a member.
        """
        key = ("table", float(eps))
        if key not in self._cache:
            offs = self.stencil_offsets(eps)
            base = self.multi_index[self.interior_idx]
            shape = np.array(self.kind.shape)
            table = np.empty((base.shape[0], offs.shape[0]), dtype=np.int64)
            own = self.interior_idx
            for k, off in enumerate(offs):
                target = base + off
                inside = np.all((target >= 0) & (target < shape), axis=1)
                clipped = np.clip(target, 0, shape - 1)
                nodes = self.lattice_to_node[tuple(clipped.T)]
                nodes = np.where(inside & (nodes >= 0), nodes, own)
                table[:, k] = nodes
            self._cache[key] = _readonly(table)
        return self._cache[key]

    def axis_neighbors(self) -> list:
        """For each active node, active nodes at distance exactly h."""
        key = ("axis",)
        if key not in self._cache:
            shape = np.array(self.kind.shape)
            out = [[] for _ in range(self.n_nodes)]
            for axis in range(self.dim):
                for step in (-1, 1):
                    t = self.multi_index.copy()
                    t[:, axis] += step
                    ok = (t[:, axis] >= 0) & (t[:, axis] < shape[axis])
                    nodes = np.full(self.n_nodes, -1)
                    nodes[ok] = self.lattice_to_node[tuple(t[ok].T)]
                    for i in np.flatnonzero(nodes >= 0):
                        out[i].append(int(nodes[i]))
            self._cache[key] = [sorted(v) for v in out]
        return self._cache[key]

    def lattice_field(self, u, fill=np.nan) -> np.ndarray:
        """Scatter a node field onto the full lattice (exterior = ``fill``)."""
        out = np.full(self.kind.size, fill, dtype=float)
        out[self.active] = u
        return out.reshape(self.kind.shape)


@dataclass(frozen=True, eq=False)
class BoundaryData:
    """Dirichlet values on the boundary nodes of a grid.

    ``values[k]`` belongs to node ``grid.boundary_idx[k]``.  ``lipschitz`` is
    the largest difference quotient over all pairs of boundary nodes, with
    Euclidean distances measured through the ambient space.
    """

    grid: Grid
    values: np.ndarray
    lipschitz: float

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(np.array(self.values, dtype=float)))

    @classmethod
    def from_values(cls, grid: Grid, values) -> "BoundaryData":
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.boundary_idx.size,):
            raise PreconditionError(
                f"expected {grid.boundary_idx.size} boundary values, got shape {values.shape}"
            )
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            node = int(grid.boundary_idx[bad[0]])
            raise NonFiniteError(f"non-finite boundary value at node {node} {grid.coords[node].tolist()}")
        return cls(grid, values, discrete_lipschitz(grid.coords[grid.boundary_idx], values))

    def field(self, interior_value=0.0) -> np.ndarray:
        """Node field equal to the data on the boundary and a constant inside."""
        u = np.full(self.grid.n_nodes, float(interior_value))
        u[self.grid.boundary_idx] = self.values
        return u

    @property
    def min(self) -> float:
        return float(self.values.min())

    @property
    def max(self) -> float:
        return float(self.values.max())


def discrete_lipschitz(points, values) -> float:
    """max |v_i - v_j| / |x_i - x_j| over all distinct pairs (0 for < 2 points)."""
    points = np.asarray(points, dtype=float)
    values = np.asarray(values, dtype=float).reshape(-1, 1)
    if values.shape[0] < 2:
        return 0.0
    dist = pdist(points)
    diff = pdist(values, "cityblock")
    return float(np.max(diff / dist))


# ----------------------------------------------------------------------------
# construction

def _inside_box(coords, lo, hi, tol):
    return np.all((coords > lo + tol) & (coords < hi - tol), axis=-1)


def _shape_predicate(shape: dict, lo, hi, h):
    kind = shape.get("type", "rectangle")
    tol = 1e-9 * h
    if kind in ("rectangle", "segment", "box"):
        return lambda c: _inside_box(c, lo, hi, tol)
    if kind == "annulus":
        r1, r2 = float(shape["r1"]), float(shape["r2"])
        if not 0 <= r1 < r2:
            raise GridError(f"annulus needs 0 <= r1 < r2, got r1={r1}, r2={r2}")
        center = np.asarray(shape.get("center", (lo + hi) / 2), dtype=float)

        def pred(c):
            r = np.linalg.norm(c - center, axis=-1)
            return (r > r1 + tol) & (r < r2 - tol) & _inside_box(c, lo, hi, tol)

        return pred
    if kind in ("l_shape", "L-shape", "l-shape"):
        if lo.size != 2:
            raise GridError("the L-shape is two-dimensional")
        mid = (lo + hi) / 2

        def pred(c):
            notch = (c[..., 0] >= mid[0] - tol) & (c[..., 1] >= mid[1] - tol)
            return _inside_box(c, lo, hi, tol) & ~notch

        return pred
    raise GridError(f"unknown shape type {kind!r}")


def build_grid(box: Sequence, h: float, shape: dict | None = None) -> Grid:
    """Build a grid on ``box = (lower_corner, upper_corner)`` with spacing h.

    ``shape`` is a descriptor dict: ``{"type": "rectangle"}`` (default; also
    ``"segment"`` in 1D), ``{"type": "annulus", "r1": .., "r2": .., "center": ..}``,
    ``{"type": "l_shape"}`` (box minus its upper-right quadrant) or
    ``{"type": "mask", "mask": array | "path": file}`` where the mask marks
    interior lattice nodes with 1.
    """
    shape = dict(shape or {"type": "rectangle"})
    lo = np.atleast_1d(np.asarray(box[0], dtype=float))
    hi = np.atleast_1d(np.asarray(box[1], dtype=float))
    if lo.shape != hi.shape or lo.ndim != 1:
        raise GridError("box corners must be points of equal dimension")
    if not h > 0 or not math.isfinite(h):
        raise GridError(f"grid spacing must be positive, got h={h}")
    extent = hi - lo
    if np.any(extent <= 0):
        raise GridError(f"degenerate box {lo.tolist()} .. {hi.tolist()}")
    steps = np.rint(extent / h).astype(int)
    if np.any(np.abs(steps * h - extent) > 1e-9 * np.maximum(extent, 1.0)):
        raise GridError(f"box extents {extent.tolist()} are not multiples of h={h}")
    lattice_shape = tuple(int(s) + 1 for s in steps)

    if shape.get("type") == "mask":
        mask = shape.get("mask")
        if mask is None:
            mask = read_mask(shape["path"])
        interior = np.asarray(mask, dtype=bool)
        if len(lattice_shape) == 1 and interior.ndim == 2 and interior.shape[1] == 1:
            interior = interior[:, 0]
        if interior.shape != lattice_shape:
            raise GridError(f"mask shape {interior.shape} does not match lattice {lattice_shape}")
        shape = {k: v for k, v in shape.items() if k != "mask"}
    else:
        pred = _shape_predicate(shape, lo, hi, h)
        axes = [lo[i] + h * np.arange(n) for i, n in enumerate(lattice_shape)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        interior = pred(mesh)

    if not interior.any():
        raise GridError(f"shape {shape!r} has no interior nodes at h={h}; refine the grid")
    edge = np.zeros_like(interior)
    for axis in range(interior.ndim):
        sl = [slice(None)] * interior.ndim
        sl[axis] = 0
        edge[tuple(sl)] = True
        sl[axis] = -1
        edge[tuple(sl)] = True
    if np.any(interior & edge):
        raise GridError(f"shape {shape!r} touches the edge of the box; no room for a boundary layer")
    labels, count = ndimage.label(interior, structure=ndimage.generate_binary_structure(interior.ndim, 1))
    if count != 1:
        raise GridError(f"interior of shape {shape!r} at h={h} splits into {count} components")
    halo = ndimage.binary_dilation(interior, structure=np.ones((3,) * interior.ndim, dtype=bool))
    kind = np.full(lattice_shape, EXTERIOR, dtype=np.int8)
    kind[halo] = BOUNDARY
    kind[interior] = INTERIOR
    return Grid(float(h), tuple(lo.tolist()), tuple(hi.tolist()), kind, shape)


def ball_stencil(grid: Grid, node: int, eps: float) -> list:
    """Active nodes in the closed ball of radius eps around an interior node."""
    if not grid.is_interior[node]:
        raise PreconditionError(f"node {node} is not an interior node")
    offs = grid.stencil_offsets(eps)
    target = grid.multi_index[node] + offs
    shape = np.array(grid.lattice_shape)
    ok = np.all((target >= 0) & (target < shape), axis=1)
    nodes = grid.lattice_to_node[tuple(target[ok].T)]
    return sorted(int(n) for n in nodes if n >= 0)


def boundary_trace(grid: Grid, g: Callable) -> BoundaryData:
    """Sample a point function on the boundary nodes."""
    pts = grid.coords[grid.boundary_idx]
    values = np.empty(len(pts))
    for k, x in enumerate(pts):
        v = float(g(x))
        if not math.isfinite(v):
            node = int(grid.boundary_idx[k])
            raise NonFiniteError(f"boundary function is not finite at node {node} {x.tolist()}")
        values[k] = v
    return BoundaryData(grid, values, discrete_lipschitz(pts, values))


def read_mask(path) -> np.ndarray:
    """Read a 0/1 mask file: line j is y-index j, character i is x-index i."""
    rows = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise GridError(f"mask file {path} must hold equal-length rows of 0/1")
    if any(ch not in "01" for r in rows for ch in r):
        raise GridError(f"mask file {path} may only contain the characters 0 and 1")
    arr = np.array([[ch == "1" for ch in r] for r in rows], dtype=bool)
    return arr.T


def write_mask(path, interior) -> None:
    interior = np.asarray(interior, dtype=bool)
    if interior.ndim == 1:
        interior = interior[:, None]
    lines = ["".join("1" if v else "0" for v in row) for row in interior.T]
    Path(path).write_text("\n".join(lines) + "\n")
