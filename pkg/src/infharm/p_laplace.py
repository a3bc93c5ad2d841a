"""Finite-p Dirichlet problems by direct minimization of the discrete energy.

The discrete energy is ``h^d * sum_cells |grad_cell u|^p`` with the forward
difference gradient of each lattice cell, ``(u(k + e_i) - u(k)) / h``.  A cell
is used when its corner node and the d forward neighbours are all active.
For p = 2 this is exactly the 5-point Dirichlet energy.

Minimization runs a damped Newton method with Armijo backtracking on the
convex energy, then finishes with cyclic exact coordinate descent: nodes are
split into d + 1 colour classes (no two nodes of a class share a cell), and
each class is minimized node-wise by safeguarded 1D Newton/bisection.  The
recorded energy sequence is non-increasing.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .errors import ConfigError, OverflowRiskError, PreconditionError
from .grid import BoundaryData, Grid

P_MAX = 64.0
_LOG_MAX = 700.0  # exp(709) is the largest double


@dataclass(frozen=True)
class PSolveConfig:
    p: float = 2.0
    tolerance: float = 1e-9
    energy_tol: float = 1e-14
    max_passes: int = 20000
    max_newton: int = 200
    eps_hat: float = 0.0
    armijo: float = 1e-4
    backtrack: float = 0.5
    method: str = "newton"

    def validate(self):
        if not (self.p >= 2 and math.isfinite(self.p)):
            raise ConfigError(f"p must be a finite number >= 2, got {self.p}", key="p")
        if self.p > P_MAX:
            raise ConfigError(f"p={self.p} exceeds the supported range p <= {P_MAX:g}; "
                              "use the mean-value solver for the p -> infinity limit", key="p")
        if not (self.tolerance > 0 and self.energy_tol > 0):
            raise ConfigError("tolerances must be positive", key="tolerance")
        if self.eps_hat < 0:
            raise ConfigError("eps_hat must be >= 0", key="eps_hat")
        if self.method not in ("newton", "coordinate"):
            raise ConfigError(f"unknown method {self.method!r}", key="method")
        if not (0 < self.armijo < 1 and 0 < self.backtrack < 1):
            raise ConfigError("line-search parameters must lie in (0, 1)", key="armijo")


@dataclass
class EnergyReport:
    energy: float
    passes: int
    newton_iterations: int
    max_update: float
    first_variation: float
    converged: bool
    energies: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "energy": self.energy,
            "passes": self.passes,
            "newton_iterations": self.newton_iterations,
            "max_update": self.max_update,
            "first_variation": self.first_variation,
            "converged": self.converged,
        }


# ----------------------------------------------------------------------------
# cell structure

class CellOperator:
    """Sparse forward-difference gradients of all cells of a grid."""

    def __init__(self, grid: Grid):
        self.grid = grid
        d = grid.dim
        shape = np.array(grid.lattice_shape)
        corners = grid.multi_index
        ok = np.all(corners + 1 < shape, axis=1)
        fwd = []
        for i in range(d):
            t = corners.copy()
            t[:, i] += 1
            nodes = np.full(grid.n_nodes, -1)
            nodes[ok] = grid.lattice_to_node[tuple(t[ok].T)]
            fwd.append(nodes)
        fwd = np.stack(fwd, axis=1)
        keep = ok & np.all(fwd >= 0, axis=1)
        self.corner = np.flatnonzero(keep)
        self.forward = fwd[keep]
        n = self.corner.size
        rows = np.arange(n)
        self.D = []
        for i in range(d):
            m = sp.csr_matrix(
                (np.r_[np.full(n, -1.0 / grid.h), np.full(n, 1.0 / grid.h)],
                 (np.r_[rows, rows], np.r_[self.corner, self.forward[:, i]])),
                shape=(n, grid.n_nodes),
            )
            self.D.append(m)
        self.n_cells = n
        self.volume = grid.h**d
        inner = grid.interior_idx
        self.D_int = [m[:, inner].tocsc() for m in self.D]
        self._incidence()

    def gradients(self, u) -> np.ndarray:
        return np.stack([m @ u for m in self.D], axis=1)

    def _incidence(self):
        """Per interior node: incident cells and the node's role in each."""
        grid = self.grid
        d = grid.dim
        pos = np.full(grid.n_nodes, -1)
        pos[grid.interior_idx] = np.arange(grid.interior_idx.size)
        cells = [[] for _ in range(grid.interior_idx.size)]
        roles = [[] for _ in range(grid.interior_idx.size)]
        for c, node in enumerate(self.corner):
            if pos[node] >= 0:
                cells[pos[node]].append(c)
                roles[pos[node]].append(-1)
            for i in range(d):
                f = self.forward[c, i]
                if pos[f] >= 0:
                    cells[pos[f]].append(c)
                    roles[pos[f]].append(i)
        width = d + 1
        self.inc_cell = np.full((len(cells), width), -1, dtype=np.int64)
        self.inc_role = np.full((len(cells), width), -2, dtype=np.int64)
        for k, (cs, rs) in enumerate(zip(cells, roles)):
            self.inc_cell[k, :len(cs)] = cs
            self.inc_role[k, :len(rs)] = rs
        mi = grid.multi_index[grid.interior_idx]
        weights = np.arange(1, d + 1)
        self.colour = (mi @ weights) % (d + 1) if d > 1 else mi[:, 0] % 2


def energy_p(u, grid: Grid, p: float, cells: CellOperator | None = None) -> float:
    """h^d * sum over cells of |forward-difference gradient|^p."""
    if p < 2:
        raise ConfigError(f"p must be >= 2, got {p}", key="p")
    cells = cells or CellOperator(grid)
    w = cells.gradients(np.asarray(u, dtype=float))
    return cells.volume * float(np.sum(_pow_norm(w, p)))


def _pow_norm(w, p):
    r = np.linalg.norm(w, axis=1)
    big = r.max(initial=0.0)
    if big > 0 and p * math.log(big) > _LOG_MAX:
        raise OverflowRiskError(
            f"|grad u|^p overflows for p={p} (max |grad u| = {big:.3g}); "
            "use the mean-value solver for large p"
        )
    return r**p


def _energy(u, cells, cfg, inner):
    E = cells.volume * float(np.sum(_pow_norm(cells.gradients(u), cfg.p)))
    if cfg.eps_hat:
        E = E / cfg.p - cfg.eps_hat ** (cfg.p - 1) * cells.volume * float(np.sum(u[inner]))
    return E


def _grad_hess(u, cells, cfg):
    p = cfg.p
    w = cells.gradients(u)
    r = np.linalg.norm(w, axis=1)
    _pow_norm(w, p)
    scale = 1.0 / p if cfg.eps_hat else 1.0
    a = p * r ** (p - 2) * cells.volume * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        b = np.where(r > 0, (p - 2) * p * r ** (p - 4), 0.0) * cells.volume * scale if p > 2 else np.zeros_like(r)
    d = len(cells.D)
    grad = sum(cells.D_int[i].T @ (a * w[:, i]) for i in range(d))
    if cfg.eps_hat:
        grad = grad - cfg.eps_hat ** (p - 1) * cells.volume
    H = None
    for i in range(d):
        for j in range(d):
            coef = b * w[:, i] * w[:, j] + (a if i == j else 0.0)
            term = cells.D_int[i].T @ sp.diags(coef) @ cells.D_int[j]
            H = term if H is None else H + term
    return grad, H.tocsc()


def _first_variation(u, cells, cfg):
    grad, _ = _grad_hess(u, cells, cfg)
    return float(np.max(np.abs(grad))) if grad.size else 0.0


# ----------------------------------------------------------------------------
# coordinate descent

def _node_derivs(u, t, nodes, cells, cfg):
    """f'(t), f''(t) of the energy in the value of each node of a class."""
    p = cfg.p
    h = cells.grid.h
    d = cells.grid.dim
    cell = cells.inc_cell[nodes]
    role = cells.inc_role[nodes]
    valid = cell >= 0
    cc = np.where(valid, cell, 0)
    corner_val = u[cells.corner[cc]]
    fwd_val = u[cells.forward[cc]]
    tt = t[:, None]
    corner_val = np.where(role == -1, tt, corner_val)
    for i in range(d):
        fwd_val[..., i] = np.where(role == i, tt, fwd_val[..., i])
    w = (fwd_val - corner_val[..., None]) / h
    v = np.zeros_like(w)
    v[role == -1] = -1.0 / h
    for i in range(d):
        v[..., i] = np.where(role == i, 1.0 / h, v[..., i])
    r = np.linalg.norm(w, axis=-1)
    wv = np.sum(w * v, axis=-1)
    vv = np.sum(v * v, axis=-1)
    scale = cells.volume * (1.0 / p if cfg.eps_hat else 1.0)
    rp2 = r ** (p - 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        rp4 = np.where(r > 0, r ** (p - 4), 0.0) if p > 2 else np.zeros_like(r)
    f1 = np.where(valid, p * rp2 * wv, 0.0).sum(axis=1) * scale
    f2 = np.where(valid, p * (rp2 * vv + (p - 2) * rp4 * wv**2), 0.0).sum(axis=1) * scale
    if cfg.eps_hat:
        f1 = f1 - cfg.eps_hat ** (p - 1) * cells.volume
    return f1, f2


def _bracket(u, nodes, cells):
    cell = cells.inc_cell[nodes]
    role = cells.inc_role[nodes]
    valid = cell >= 0
    cc = np.where(valid, cell, 0)
    cand = np.where(role[..., None] == -1, u[cells.forward[cc]], np.nan)
    own = np.where(role >= 0, u[cells.corner[cc]], np.nan)
    allv = np.concatenate([np.where(valid[..., None], cand, np.nan).reshape(len(nodes), -1),
                           np.where(valid, own, np.nan)], axis=1)
    return np.nanmin(allv, axis=1), np.nanmax(allv, axis=1)


def _coordinate_pass(u, cells, cfg, inner):
    """Exact minimization over every colour class in turn; returns max |update|."""
    biggest = 0.0
    for colour in range(int(cells.colour.max()) + 1):
        nodes = np.flatnonzero(cells.colour == colour)
        if nodes.size == 0:
            continue
        gidx = inner[nodes]
        lo, hi = _bracket(u, nodes, cells)
        if cfg.eps_hat:
            # the source term pushes the minimizer upwards; widen until f'(hi) >= 0
            width = np.maximum(hi - lo, 1.0)
            for _ in range(200):
                f1, _ = _node_derivs(u, hi, nodes, cells, cfg)
                if np.all(f1 >= 0):
                    break
                hi = np.where(f1 < 0, hi + width, hi)
                width *= 2
        t = np.clip(u[gidx], lo, hi)
        old = u[gidx].copy()
        for _ in range(200):
            f1, f2 = _node_derivs(u, t, nodes, cells, cfg)
            lo = np.where(f1 < 0, t, lo)
            hi = np.where(f1 > 0, t, hi)
            with np.errstate(divide="ignore", invalid="ignore"):
                newton = t - f1 / f2
            mid = 0.5 * (lo + hi)
            inside = np.isfinite(newton) & (newton > lo) & (newton < hi)
            nt = np.where(inside, newton, mid)
            nt = np.where(f1 == 0, t, nt)
            done = np.abs(nt - t) <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(t))
            t = nt
            if np.all(done | (hi - lo <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(t)))):
                break
        # never accept a coordinate move that raises the energy
        E_old = _energy(u, cells, cfg, inner)
        u[gidx] = t
        if _energy(u, cells, cfg, inner) > E_old:
            u[gidx] = old
            continue
        biggest = max(biggest, float(np.max(np.abs(t - old))))
    return biggest


# ----------------------------------------------------------------------------
# driver

def _initial_guess(grid, g):
    from .lipschitz import mcshane_whitney

    return 0.5 * (mcshane_whitney(grid, g, "upper") + mcshane_whitney(grid, g, "lower"))


def solve_p(grid: Grid, g: BoundaryData, config: PSolveConfig, initial=None, cells=None):
    """Minimize the discrete p-energy with the given Dirichlet data.

    Returns (field, EnergyReport).  ``config.eps_hat > 0`` minimizes
    J(v) = h^d sum (1/p)|grad v|^p - eps_hat^(p-1) h^d sum_interior v instead.
    """
    config.validate()
    if g.values.size != grid.boundary_idx.size:
        raise PreconditionError("boundary data does not match the grid")
    cells = cells or CellOperator(grid)
    inner = grid.interior_idx
    u = _initial_guess(grid, g) if initial is None else np.array(initial, dtype=float)
    u[grid.boundary_idx] = g.values
    E = _energy(u, cells, config, inner)
    energies = [E]
    newton_its = 0

    if config.method == "newton" and inner.size:
        for _ in range(config.max_newton):
            grad, H = _grad_hess(u, cells, config)
            diag = H.diagonal()
            mu = 1e-12 * max(float(diag.max(initial=0.0)), 1e-300)
            try:
                step = spsolve(H + mu * sp.identity(inner.size, format="csc"), -grad)
            except RuntimeError:
                break
            slope = float(grad @ step)
            if not np.all(np.isfinite(step)) or slope >= 0:
                break
            t = 1.0
            accepted = False
            for _ in range(60):
                trial = u.copy()
                trial[inner] += t * step
                try:
                    Et = _energy(trial, cells, config, inner)
                except OverflowRiskError:
                    Et = math.inf
                if Et <= E + config.armijo * t * slope:
                    accepted = True
                    break
                t *= config.backtrack
            if not accepted:
                break
            newton_its += 1
            u = trial
            move = t * float(np.max(np.abs(step)))
            dec = E - Et
            E = Et
            energies.append(E)
            if move <= 0.1 * config.tolerance or dec <= config.energy_tol * max(abs(E), 1e-300):
                break

    passes = 0
    max_update = math.inf if inner.size else 0.0
    while inner.size and passes < config.max_passes:
        max_update = _coordinate_pass(u, cells, config, inner)
        passes += 1
        E_new = _energy(u, cells, config, inner)
        energies.append(E_new)
        E = E_new
        if max_update <= config.tolerance:
            break
    report = EnergyReport(
        energy=E,
        passes=passes,
        newton_iterations=newton_its,
        max_update=max_update,
        first_variation=_first_variation(u, cells, config) if inner.size else 0.0,
        converged=max_update <= config.tolerance,
        energies=energies,
    )
    return u, report


def gradient_averages(u, grid: Grid, exponents=(2, 4, 8), cells=None) -> dict:
    """(mean over cells of |grad u|^s)^(1/s) for each exponent s."""
    cells = cells or CellOperator(grid)
    r = np.linalg.norm(cells.gradients(np.asarray(u, dtype=float)), axis=1)
    return {int(s): float(np.mean(r**s) ** (1.0 / s)) for s in exponents}


@dataclass
class SweepEntry:
    p: float
    field: np.ndarray
    report: EnergyReport
    diagnostics: dict


def p_sweep(grid: Grid, g: BoundaryData, ps, config: PSolveConfig | None = None,
            mv_field=None, mv_eps: float | None = None, warm_start: bool = True,
            workers: int = 1, exponents=(2, 4, 8)):
    """Solve for each p in ascending ``ps``; compare with the mean-value solution.

    ``mv_field`` is the reference plain mean-value solution; when omitted it
    is computed with ``mv_eps`` (default 4h).  With ``warm_start`` each solve
    starts from the previous p; otherwise solves are independent and may run
    on ``workers`` threads.
    """
    from .mv_solver import MVConfig, solve_mv

    ps = [float(p) for p in ps]
    if ps != sorted(ps):
        raise ConfigError("exponents must be ascending", key="ps")
    if any(p > P_MAX for p in ps):
        raise ConfigError(f"exponents must be <= {P_MAX:g}", key="ps")
    config = config or PSolveConfig()
    if mv_field is None:
        mv_field, _ = solve_mv(grid, g, MVConfig(eps=mv_eps or 4 * grid.h))
    cells = CellOperator(grid)

    def diagnose(p, u, rep):
        diag = {
            "distance_to_mv": float(np.max(np.abs(u - mv_field))),
            "grad_Ls": {s: v for s, v in gradient_averages(u, grid, exponents, cells).items() if s <= p},
            "energy": rep.energy,
        }
        return SweepEntry(p, u, rep, diag)

    out = []
    if warm_start:
        prev = None
        for p in ps:
            u, rep = solve_p(grid, g, replace(config, p=p), initial=prev, cells=cells)
            out.append(diagnose(p, u, rep))
            prev = u
        return out

    def one(p):
        return solve_p(grid, g, replace(config, p=p), cells=cells)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(one, ps))
    return [diagnose(p, u, rep) for p, (u, rep) in zip(ps, results)]
