"""Lipschitz extensions and verifiers for the comparison properties.

Every checker returns a :class:`ComparisonReport`; a report fails exactly when
its violation exceeds its tolerance.  Tolerances are ``c * h`` style
allowances chosen by the caller, plus a relative round-off term where noted.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import GridError, PreconditionError
from .grid import BOUNDARY, EXTERIOR, INTERIOR, BoundaryData, Grid


@dataclass
class ComparisonReport:
    name: str
    passed: bool
    violation: float
    tolerance: float
    locations: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "property": self.name,
            "passed": bool(self.passed),
            "violation": float(self.violation),
            "tolerance": float(self.tolerance),
            "locations": [list(map(float, p)) for p in self.locations],
            "params": self.params,
            "details": self.details,
        }


def _report(name, violation, tolerance, locations=(), params=None, details=None):
    violation = max(0.0, float(violation))
    return ComparisonReport(name, violation <= tolerance, violation, float(tolerance),
                            [np.asarray(p, dtype=float).tolist() for p in locations],
                            params or {}, details or {})


# ----------------------------------------------------------------------------
# extensions

def mcshane_whitney(grid: Grid, g: BoundaryData, side: str = "upper", chunk: int = 4096) -> np.ndarray:
    """Euclidean McShane-Whitney envelope of the boundary data.

    upper(x) = min_xi g(xi) + L|x - xi|,  lower(x) = max_xi g(xi) - L|x - xi|.
    """
    if side not in ("upper", "lower"):
        raise PreconditionError(f"side must be 'upper' or 'lower', got {side!r}")
    L = g.lipschitz
    bpts = grid.coords[grid.boundary_idx]
    out = np.empty(grid.n_nodes)
    for start in range(0, grid.n_nodes, chunk):
        pts = grid.coords[start:start + chunk]
        d = np.linalg.norm(pts[:, None, :] - bpts[None, :, :], axis=-1)
        if side == "upper":
            out[start:start + chunk] = np.min(g.values + L * d, axis=1)
        else:
            out[start:start + chunk] = np.max(g.values - L * d, axis=1)
    out[grid.boundary_idx] = g.values
    return out


def stencil_envelope(grid: Grid, g: BoundaryData, eps: float, side: str = "upper") -> np.ndarray:
    """McShane-Whitney envelope in the hop metric of the eps-ball stencil graph.

    upper(x) = min_xi g(xi) + L eps hops(x, xi).  Since every hop is at most
    eps long this dominates the Euclidean upper envelope and still equals g on
    the boundary.  At each interior node some stencil neighbour is exactly
    L*eps lower and none is more than L*eps higher, so the field is a discrete
    supersolution of the plain scheme and the iteration started from it
    decreases monotonically.  The lower envelope is the mirror image.
    """
    sign = 1.0 if side == "upper" else -1.0
    if side not in ("upper", "lower"):
        raise PreconditionError(f"side must be 'upper' or 'lower', got {side!r}")
    step = g.lipschitz * eps
    u = np.full(grid.n_nodes, np.inf)
    u[grid.boundary_idx] = sign * g.values
    table = grid.neighbor_table(eps)
    inner = grid.interior_idx
    while True:
        cand = np.minimum(u[inner], u[table].min(axis=1) + step)
        if np.array_equal(cand, u[inner]):
            break
        u[inner] = cand
    if not np.all(np.isfinite(u)):
        raise GridError("some interior nodes cannot reach the boundary through eps-ball stencils")
    return sign * u


# ----------------------------------------------------------------------------
# Lipschitz constants

def _region_nodes(grid: Grid, region) -> np.ndarray:
    if region is None:
        return np.arange(grid.n_nodes)
    if callable(region):
        mask = np.asarray([bool(region(x)) for x in grid.coords])
        return np.flatnonzero(mask)
    region = np.asarray(region)
    if region.dtype == bool:
        return np.flatnonzero(region)
    return np.unique(region.astype(np.int64))


def pairwise_lipschitz(points, values, chunk: int = 1024) -> float:
    """max |v_i - v_j| / |x_i - x_j| over distinct pairs, in row blocks."""
    points = np.asarray(points, dtype=float)
    values = np.asarray(values, dtype=float)
    best = 0.0
    n = values.size
    for start in range(0, n, chunk):
        p = points[start:start + chunk]
        v = values[start:start + chunk]
        d = np.linalg.norm(p[:, None, :] - points[None, :, :], axis=-1)
        dv = np.abs(v[:, None] - values[None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(d > 0, dv / d, 0.0)
        best = max(best, float(q.max()))
    return best


def lipschitz_constant(u, grid: Grid, region=None) -> float:
    """Largest difference quotient of u over node pairs in ``region``.

    ``region`` may be None (all nodes), node indices, a boolean node mask or
    a predicate on coordinates.  A single-node region yields 0 with a warning.
    """
    nodes = _region_nodes(grid, region)
    if nodes.size == 0:
        raise PreconditionError("region contains no nodes")
    if nodes.size == 1:
        warnings.warn("lipschitz_constant on a single-node region is 0 by convention", stacklevel=2)
        return 0.0
    return pairwise_lipschitz(grid.coords[nodes], np.asarray(u, dtype=float)[nodes])


# ----------------------------------------------------------------------------
# subdomains

def subdomain_mask(grid: Grid, nodes) -> np.ndarray:
    """Lattice-shaped boolean mask of a node set."""
    mask = np.zeros(grid.kind.size, dtype=bool)
    mask[grid.active[np.asarray(nodes, dtype=np.int64)]] = True
    return mask.reshape(grid.lattice_shape)


def subdomain_boundary(grid: Grid, nodes) -> np.ndarray:
    """Nodes of the set that have a distance-h lattice neighbour outside it."""
    mask = subdomain_mask(grid, nodes)
    cross = ndimage.generate_binary_structure(grid.dim, 1)
    inner = ndimage.binary_erosion(mask, structure=cross, border_value=0)
    edge = mask & ~inner
    return np.sort(grid.lattice_to_node[edge])


def subgrid(grid: Grid, nodes):
    """Grid whose interior is ``nodes`` minus their discrete boundary.

    Returns (subgrid, parent_index) with parent_index[k] the parent node of
    subgrid node k.
    """
    nodes = np.unique(np.asarray(nodes, dtype=np.int64))
    edge = subdomain_boundary(grid, nodes)
    kind = np.full(grid.kind.size, EXTERIOR, dtype=np.int8)
    kind[grid.active[nodes]] = INTERIOR
    kind[grid.active[edge]] = BOUNDARY
    if not np.any(kind == INTERIOR):
        raise PreconditionError("subdomain has no interior nodes")
    sub = Grid(grid.h, grid.lower, grid.upper, kind.reshape(grid.lattice_shape), {"type": "subdomain"})
    parent = grid.lattice_to_node.ravel()[sub.active]
    return sub, parent


def nodes_in_ball(grid: Grid, center, radius, closed=True) -> np.ndarray:
    d = np.linalg.norm(grid.coords - np.asarray(center, dtype=float), axis=1)
    slack = 1e-9 * grid.h
    return np.flatnonzero(d <= radius + slack if closed else d < radius - slack)


# ----------------------------------------------------------------------------
# checkers

def check_maximum_principle(u, grid: Grid, g: BoundaryData | None = None, tol: float = 1e-9) -> ComparisonReport:
    """min g <= u <= max g on every node."""
    u = np.asarray(u, dtype=float)
    bvals = u[grid.boundary_idx] if g is None else g.values
    lo, hi = float(bvals.min()), float(bvals.max())
    over = u - hi
    under = lo - u
    worst = np.maximum(over, under)
    k = int(np.argmax(worst))
    return _report("max-principle", worst[k], tol, [grid.coords[k]] if worst[k] > tol else [],
                   {"min_g": lo, "max_g": hi})


def check_cone_comparison(u, grid: Grid, subdomain, apex, b: float, side: str = "above",
                          c: float = 0.0) -> ComparisonReport:
    """Comparison with the cone b|x - apex| on a node subdomain.

    above:  u(x) - b|x-x0| <= max over the subdomain boundary of the same,
    below:  u(x) - b|x-x0| >= min over the subdomain boundary of the same,
    at every subdomain node.  Tolerance: 1e-6 ||u||_inf + c h.
    """
    if side not in ("above", "below"):
        raise PreconditionError(f"side must be 'above' or 'below', got {side!r}")
    u = np.asarray(u, dtype=float)
    nodes = _region_nodes(grid, subdomain)
    edge = subdomain_boundary(grid, nodes)
    if edge.size == 0:
        raise PreconditionError("subdomain has an empty discrete boundary")
    apex = np.asarray(apex, dtype=float)
    inner = np.setdiff1d(nodes, edge)
    k = np.rint((apex - np.asarray(grid.lower)) / grid.h).astype(int)
    if np.all(k >= 0) and np.all(k < np.array(grid.lattice_shape)):
        near = grid.lattice_to_node[tuple(k)]
        if near >= 0 and near in set(inner.tolist()):
            raise PreconditionError(f"cone apex {apex.tolist()} lies inside the subdomain")
    w = u - b * np.linalg.norm(grid.coords - apex, axis=1)
    if side == "above":
        slack = w[edge].max() - w[nodes]
    else:
        slack = w[nodes] - w[edge].min()
    tol = 1e-6 * float(np.max(np.abs(u))) + c * grid.h
    j = int(np.argmin(slack))
    return _report(
        f"cone-comparison-{side}", -slack[j], tol, [grid.coords[nodes[j]]],
        {"apex": apex.tolist(), "b": float(b), "side": side, "n_nodes": int(nodes.size)},
        {"worst_slack": float(slack[j])},
    )


def _ball_inside(grid: Grid, x0, R) -> bool:
    x0 = np.asarray(x0, dtype=float)
    lo = np.ceil((x0 - R - np.asarray(grid.lower)) / grid.h - 1e-9).astype(int)
    hi = np.floor((x0 + R - np.asarray(grid.lower)) / grid.h + 1e-9).astype(int)
    if np.any(lo < 0) or np.any(hi >= np.array(grid.lattice_shape)):
        return False
    sl = tuple(slice(a, b + 1) for a, b in zip(lo, hi))
    block = grid.kind[sl]
    axes = [grid.lower[i] + grid.h * np.arange(lo[i], hi[i] + 1) for i in range(grid.dim)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    inside = np.linalg.norm(mesh - x0, axis=-1) < R
    return bool(np.all(block[inside] != EXTERIOR))


def check_harnack(u, grid: Grid, x0, r: float, R: float, form: str = "factor3",
                  slack: float | None = None) -> ComparisonReport:
    """Harnack inequalities for nonnegative fields on B(x0, r), B(x0, R) in Omega.

    factor3:      max u / min u over B(x0, r) <= 3, requires 4r < R;
                  default tolerance 0.2 for discretization.
    exponential:  u(x) <= u(y) exp(|x - y|/(R - r)) for all pairs in B(x0, r);
                  the violation is the largest excess of the ratio over 1,
                  default tolerance 1e-9.
    """
    u = np.asarray(u, dtype=float)
    if form == "factor3" and not 4 * r < R:
        raise PreconditionError(f"factor-3 Harnack needs 4r < R, got r={r}, R={R}")
    if form == "exponential" and not r < R:
        raise PreconditionError(f"exponential Harnack needs r < R, got r={r}, R={R}")
    if form not in ("factor3", "exponential"):
        raise PreconditionError(f"unknown Harnack form {form!r}")
    if not _ball_inside(grid, x0, R):
        raise PreconditionError(f"B({list(map(float, x0))}, {R}) is not contained in the domain")
    big = nodes_in_ball(grid, x0, R, closed=False)
    neg = big[u[big] < 0]
    if neg.size:
        raise PreconditionError(f"u is negative at node {int(neg[0])} {grid.coords[neg[0]].tolist()}")
    small = nodes_in_ball(grid, x0, r)
    if small.size == 0:
        raise PreconditionError(f"no nodes within r={r} of {list(x0)}")
    vals = u[small]
    params = {"x0": list(map(float, x0)), "r": float(r), "R": float(R), "form": form}
    if form == "factor3":
        tol = 0.2 if slack is None else slack
        hi, lo = vals.max(), vals.min()
        ratio = 1.0 if hi == 0 else (math.inf if lo == 0 else hi / lo)
        locs = [grid.coords[small[np.argmax(vals)]], grid.coords[small[np.argmin(vals)]]]
        return _report("harnack-factor3", ratio - 3.0, tol, locs, params, {"worst_ratio": ratio})
    tol = 1e-9 if slack is None else slack
    pts = grid.coords[small]
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    bound = vals[None, :] * np.exp(d / (R - r))
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(bound > 0, vals[:, None] / bound, np.where(vals[:, None] > 0, np.inf, 0.0))
    if q.shape[0] > 1:
        np.fill_diagonal(q, -np.inf)  # x = y holds with equality
    i, j = np.unravel_index(int(np.argmax(q)), q.shape)
    worst = float(q[i, j])
    return _report("harnack-exponential", worst - 1.0, tol, [pts[i], pts[j]], params, {"worst_ratio": worst})


def sphere_profile(u, grid: Grid, x0, radii, mode: str = "max", c: float = 0.0):
    """Max (or min) of u over discrete spheres |dist - r| <= h/2.

    Returns (values, report).  The report checks convexity of the max profile
    (concavity of the min profile): second differences, weighted for uneven
    radii, must not fall below -(1e-3 ||u||_inf + c h).
    """
    if mode not in ("max", "min"):
        raise PreconditionError(f"mode must be 'max' or 'min', got {mode!r}")
    u = np.asarray(u, dtype=float)
    radii = np.asarray(radii, dtype=float)
    dist = np.linalg.norm(grid.coords - np.asarray(x0, dtype=float), axis=1)
    values = np.empty(radii.size)
    for k, r in enumerate(radii):
        shell = np.flatnonzero(np.abs(dist - r) <= grid.h / 2 + 1e-12)
        if shell.size == 0:
            raise GridError(f"no nodes on the sphere of radius {r}; use a finer grid")
        values[k] = u[shell].max() if mode == "max" else u[shell].min()
    sign = 1.0 if mode == "max" else -1.0
    f = sign * values
    second = []
    for i in range(1, radii.size - 1):
        a, b = radii[i] - radii[i - 1], radii[i + 1] - radii[i]
        chord = (b * f[i - 1] + a * f[i + 1]) / (a + b)
        second.append(2.0 * (chord - f[i]))
    second = np.asarray(second)
    tol = 1e-3 * float(np.max(np.abs(u))) + c * grid.h
    worst = float(-second.min()) if second.size else 0.0
    locs = [] if not second.size else [np.asarray([radii[1 + int(np.argmin(second))]])]
    rep = _report(f"three-spheres-{mode}", worst, tol, locs,
                  {"x0": list(map(float, x0)), "radii": radii.tolist(), "mode": mode},
                  {"second_differences": second.tolist(), "profile": values.tolist()})
    return values, rep


def _distance_to_set(points, targets, chunk=2048):
    out = np.empty(len(points))
    for s in range(0, len(points), chunk):
        d = np.linalg.norm(points[s:s + chunk, None, :] - targets[None, :, :], axis=-1)
        out[s:s + chunk] = d.min(axis=1)
    return out


def check_amle(u, grid: Grid, subdomain, mv_config, n_competitors: int = 20, seed: int = 0,
               c: float = 1.0) -> ComparisonReport:
    """Optimal-extension test on a subdomain strictly inside the grid.

    The field's Lipschitz constant over the subdomain is compared against
    competitors sharing its trace on the subdomain boundary: the mean-value
    re-solve with that trace, and ``n_competitors`` smooth random
    perturbations vanishing on the subdomain boundary.  Passes when no
    competitor beats the field by more than c*h.
    """
    from .mv_solver import solve_mv

    u = np.asarray(u, dtype=float)
    nodes = _region_nodes(grid, subdomain)
    if np.any(~grid.is_interior[nodes]):
        raise PreconditionError("subdomain touches the boundary of the grid")
    sub, parent = subgrid(grid, nodes)
    gsub = BoundaryData.from_values(sub, u[parent[sub.boundary_idx]])
    resolved_sub, rep = solve_mv(sub, gsub, mv_config)
    resolved = u.copy()
    resolved[parent] = resolved_sub

    L_u = lipschitz_constant(u, grid, nodes)
    competitors = {"resolved": lipschitz_constant(resolved, grid, nodes)}
    rng = np.random.default_rng(seed)
    pts = grid.coords[nodes]
    edge_pts = grid.coords[subdomain_boundary(grid, nodes)]
    bump = _distance_to_set(pts, edge_pts)
    span = float(np.ptp(u[nodes])) + grid.h
    for k in range(n_competitors):
        freq = rng.normal(size=grid.dim) * 2 * np.pi / max(grid.diameter, grid.h)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(-1, 1) * span
        v = u.copy()
        v[nodes] = u[nodes] + amp * bump * np.sin(pts @ freq + phase) / max(bump.max(), grid.h)
        competitors[f"random-{k}"] = lipschitz_constant(v, grid, nodes)
    best_name = min(competitors, key=competitors.get)
    violation = L_u - competitors[best_name]
    return _report(
        "amle", violation, c * grid.h, [],
        {"n_nodes": int(nodes.size), "n_competitors": n_competitors, "seed": seed},
        {"lipschitz_u": L_u, "lipschitz_resolved": competitors["resolved"],
         "best_competitor": best_name, "best_competitor_lipschitz": competitors[best_name],
         "resolve_sweeps": rep.sweeps},
    )


def random_subdomains(grid: Grid, n: int, rng, radius=(0.1, 0.3)) -> list:
    """``n`` node balls B(x, r) whose nodes are all interior to the grid.

    Radii are drawn as a fraction of the grid diameter; centres are interior
    nodes.  Raises when no admissible ball is found after many draws.
    """
    out = []
    inner = grid.interior_idx
    tries = 0
    while len(out) < n:
        tries += 1
        if tries > 1000 * n:
            raise PreconditionError("could not place random subdomains inside the grid; use a finer grid")
        center = grid.coords[inner[rng.integers(inner.size)]]
        r = rng.uniform(*radius) * grid.diameter
        nodes = nodes_in_ball(grid, center, r)
        if nodes.size < 5 or np.any(~grid.is_interior[nodes]):
            continue
        if subdomain_boundary(grid, nodes).size == nodes.size:
            continue
        out.append(nodes)
    return out


def cone_suite(u, grid: Grid, n_cones: int = 100, n_subdomains: int = 10, seed: int = 0,
               c: float = 1.0, slope: float = 2.0) -> ComparisonReport:
    """Randomized comparison with cones from above and below.

    For each of ``n_subdomains`` random interior balls, ``n_cones`` cones
    with apex outside the ball and slope b uniform in [-slope, slope] are
    checked on both sides.  The report carries the worst violation; the
    tolerance is 1e-6 ||u||_inf + c h as for a single comparison.
    """
    rng = np.random.default_rng(seed)
    subs = random_subdomains(grid, n_subdomains, rng)
    lo = np.asarray(grid.lower, dtype=float)
    hi = np.asarray(grid.upper, dtype=float)
    span = hi - lo
    worst = -math.inf
    where, params = [], {}
    failures = 0
    checked = 0
    for s, nodes in enumerate(subs):
        centre = grid.coords[nodes].mean(axis=0)
        rad = float(np.max(np.linalg.norm(grid.coords[nodes] - centre, axis=1)))
        for _ in range(n_cones):
            while True:
                apex = rng.uniform(lo - 0.5 * span, hi + 0.5 * span)
                if np.linalg.norm(apex - centre) > rad + grid.h:
                    break
            b = float(rng.uniform(-slope, slope))
            for side in ("above", "below"):
                rep = check_cone_comparison(u, grid, nodes, apex, b, side, c)
                checked += 1
                failures += not rep.passed
                if rep.violation > worst:
                    worst = rep.violation
                    where = rep.locations
                    params = dict(rep.params, subdomain=s)
    tol = 1e-6 * float(np.max(np.abs(u))) + c * grid.h
    return _report("cone-suite", worst, tol, where, {"n_cones": n_cones, "n_subdomains": n_subdomains,
                                                     "seed": seed, "c": c, "slope": slope},
                   {"checks": checked, "failures": failures, "worst_case": params})
