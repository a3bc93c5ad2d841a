"""Fixed-point solver for the discrete mean-value (tug-of-war) scheme.

One Jacobi sweep replaces every interior value by

    u(x) <- (max_B u + min_B u) / 2 + correction(x)

where B is the clipped closed ball of radius eps around x.  The correction
selects the variant: 0 for the plain equation, -(eps^2/2) F(x) for the
normalized Poisson equation (Delta_inf u / |grad u|^2 = F), and +/-(eps^2/2)
delta for the upper/lower perturbations.  The iteration is monotone and
non-expansive in the sup norm; it converges geometrically but slowly, roughly
like (diam/eps)^2 sweeps per decade of accuracy.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, PreconditionError, SchemeError
from .grid import BoundaryData, Grid

INITIALIZATIONS = ("mw_upper", "mw_lower", "boundary_mean")


@dataclass(frozen=True)
class SchemeVariant:
    tag: str = "plain"
    delta: Optional[float] = None
    rhs: Optional[Callable] = None

    def __post_init__(self):
        if self.tag not in ("plain", "upper", "lower", "poisson"):
            raise ConfigError(f"unknown scheme variant {self.tag!r}", key="variant")
        if self.tag in ("upper", "lower"):
            if self.delta is None or not (math.isfinite(self.delta) and self.delta > 0):
                raise ConfigError(f"{self.tag} variant needs a finite delta > 0, got {self.delta}", key="delta")
        if self.tag == "poisson" and self.rhs is None:
            raise ConfigError("poisson variant needs a right-hand side F", key="rhs")

    @classmethod
    def plain(cls):
        return cls("plain")

    @classmethod
    def upper(cls, delta):
        return cls("upper", float(delta))

    @classmethod
    def lower(cls, delta):
        return cls("lower", float(delta))

    @classmethod
    def poisson(cls, rhs):
        return cls("poisson", rhs=rhs)

    def correction(self, grid: Grid, eps: float) -> np.ndarray:
        """Additive term per interior node (aligned with grid.interior_idx)."""
        n = grid.interior_idx.size
        half = 0.5 * eps * eps
        if self.tag == "plain":
            return np.zeros(n)
        if self.tag == "upper":
            return np.full(n, half * self.delta)
        if self.tag == "lower":
            return np.full(n, -half * self.delta)
        pts = grid.coords[grid.interior_idx]
        F = np.array([float(self.rhs(x)) for x in pts])
        if not np.all(np.isfinite(F)):
            raise ConfigError("right-hand side F is not finite on the grid", key="rhs")
        return -half * F


@dataclass(frozen=True)
class MVConfig:
    eps: float
    tolerance: float = 1e-8
    max_sweeps: int = 10**6
    initialization: str = "mw_upper"
    variant: SchemeVariant = field(default_factory=SchemeVariant.plain)
    workers: int = 1

    def validate(self, grid: Grid) -> None:
        if not self.eps >= grid.h * (1 - 1e-9):
            raise ConfigError(f"eps={self.eps} must satisfy eps >= h={grid.h}", key="eps")
        if not self.tolerance > 0:
            raise ConfigError(f"tolerance must be positive, got {self.tolerance}", key="tolerance")
        if int(self.max_sweeps) < 1:
            raise ConfigError(f"max_sweeps must be >= 1, got {self.max_sweeps}", key="max_sweeps")
        if self.initialization not in INITIALIZATIONS:
            raise ConfigError(f"unknown initialization {self.initialization!r}", key="initialization")
        if int(self.workers) < 1:
            raise ConfigError("workers must be >= 1", key="workers")


@dataclass
class SolveReport:
    sweeps: int
    update_norm: float
    converged: bool
    truncated: bool
    monotone: bool
    direction: str
    u_min: float
    u_max: float
    wall_time: float
    variant: str = "plain"

    def to_dict(self, timing: bool = False) -> dict:
        d = {
            "sweeps": self.sweeps,
            "update_norm": self.update_norm,
            "converged": self.converged,
            "truncated": self.truncated,
            "monotone": self.monotone,
            "direction": self.direction,
            "u_min": self.u_min,
            "u_max": self.u_max,
            "variant": self.variant,
        }
        if timing:
            d["wall_time"] = self.wall_time
        return d


def _ball_extremes(u, table, workers=1):
    if workers <= 1 or table.shape[0] < 2 * workers:
        vals = u[table]
        return vals.max(axis=1), vals.min(axis=1)
    chunks = np.array_split(np.arange(table.shape[0]), workers)

    def work(rows):
        vals = u[table[rows]]
        return vals.max(axis=1), vals.min(axis=1)

    hi = np.empty(table.shape[0])
    lo = np.empty(table.shape[0])
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for rows, (a, b) in zip(chunks, pool.map(work, chunks)):
            hi[rows], lo[rows] = a, b
    return hi, lo


def mv_sweep(u, grid: Grid, config: MVConfig, _correction=None) -> np.ndarray:
    """One Jacobi sweep; boundary values are copied unchanged."""
    u = np.asarray(u, dtype=float)
    if u.shape != (grid.n_nodes,):
        raise PreconditionError(f"field has shape {u.shape}, grid has {grid.n_nodes} nodes")
    table = grid.neighbor_table(config.eps)
    corr = config.variant.correction(grid, config.eps) if _correction is None else _correction
    hi, lo = _ball_extremes(u, table, config.workers)
    out = u.copy()
    out[grid.interior_idx] = 0.5 * (hi + lo) + corr
    return out


def residual_field(u, grid: Grid, eps: float) -> np.ndarray:
    """u(x) - (max_B u + min_B u)/2 at interior nodes, 0 on the boundary."""
    u = np.asarray(u, dtype=float)
    hi, lo = _ball_extremes(u, grid.neighbor_table(eps))
    r = np.zeros(grid.n_nodes)
    r[grid.interior_idx] = u[grid.interior_idx] - 0.5 * (hi + lo)
    return r


def initial_field(grid: Grid, g: BoundaryData, config: MVConfig) -> np.ndarray:
    from .lipschitz import stencil_envelope

    if config.initialization == "mw_upper":
        return stencil_envelope(grid, g, config.eps, "upper")
    if config.initialization == "mw_lower":
        return stencil_envelope(grid, g, config.eps, "lower")
    return g.field(float(np.mean(g.values)))


def solve_mv(grid: Grid, g: BoundaryData, config: MVConfig, initial=None):
    """Iterate mv_sweep to a fixed point; returns (field, SolveReport).

    Non-convergence within ``max_sweeps`` is reported through
    ``report.truncated``; the last iterate is still returned.
    """
    config.validate(grid)
    if g.grid is not grid and g.values.size != grid.boundary_idx.size:
        raise PreconditionError("boundary data belongs to a different grid")
    t0 = time.perf_counter()
    u = initial_field(grid, g, config) if initial is None else np.array(initial, dtype=float)
    u[grid.boundary_idx] = g.values
    table = grid.neighbor_table(config.eps)
    corr = config.variant.correction(grid, config.eps)
    inner = grid.interior_idx
    decreasing = increasing = True
    norm = math.inf
    sweeps = 0
    # rounding of (hi + lo)/2 can move a fixed value by an ulp either way
    ulps = 8 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(u))))
    while sweeps < config.max_sweeps:
        hi, lo = _ball_extremes(u, table, config.workers)
        new = 0.5 * (hi + lo) + corr
        diff = new - u[inner]
        sweeps += 1
        decreasing &= bool(np.all(diff <= ulps))
        increasing &= bool(np.all(diff >= -ulps))
        norm = float(np.max(np.abs(diff))) if diff.size else 0.0
        u[inner] = new
        if norm <= config.tolerance:
            break
    converged = norm <= config.tolerance
    direction = "non-increasing" if decreasing else "non-decreasing" if increasing else "none"
    report = SolveReport(
        sweeps=sweeps,
        update_norm=norm,
        converged=converged,
        truncated=not converged,
        monotone=decreasing or increasing,
        direction=direction,
        u_min=float(u.min()),
        u_max=float(u.max()),
        wall_time=time.perf_counter() - t0,
        variant=config.variant.tag,
    )
    return u, report


@dataclass
class SandwichResult:
    lower: np.ndarray
    plain: np.ndarray
    upper: np.ndarray
    gap: float
    constant: float
    reports: dict

    def to_dict(self) -> dict:
        return {
            "gap": self.gap,
            "constant": self.constant,
            "reports": {k: r.to_dict() for k, r in self.reports.items()},
        }


def solve_sandwich(grid: Grid, g: BoundaryData, eps: float, delta: float,
                   tol: float = 1e-8, max_sweeps: int = 10**6):
    """Solve the lower, plain and upper schemes and verify their ordering.

    The perturbed solves start from the plain solution, which is a sub-
    (resp. super-) solution of the upper (resp. lower) scheme, so their
    iterates move monotonically away from it.  ``constant`` is the measured
    ratio gap / (delta * diam^2 / 2).
    """
    if not delta > 0:
        raise ConfigError(f"delta must be positive, got {delta}", key="delta")
    base = MVConfig(eps=eps, tolerance=tol, max_sweeps=max_sweeps)
    plain, rp = solve_mv(grid, g, base)
    upper, ru = solve_mv(grid, g, replace(base, variant=SchemeVariant.upper(delta)), initial=plain)
    lower, rl = solve_mv(grid, g, replace(base, variant=SchemeVariant.lower(delta)), initial=plain)
    bad = np.flatnonzero((lower > plain) | (plain > upper))
    if bad.size:
        x = grid.coords[bad[0]].tolist()
        raise SchemeError(
            f"ordering lower <= plain <= upper violated at {bad.size} nodes, first at {x}"
        )
    gap = float(np.max(upper - lower))
    diam = grid.diameter
    constant = gap / (delta * diam**2 / 2) if diam > 0 else math.nan
    return SandwichResult(lower, plain, upper, gap, constant, {"lower": rl, "plain": rp, "upper": ru})
