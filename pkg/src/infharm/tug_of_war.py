"""Monte Carlo simulation of eps-step Tug-of-War on a lattice grid.

A token sits on a grid node.  Each ply a fair coin decides which player moves;
the winner moves the token to any node of the closed eps-ball stencil.  The
game ends when the token reaches a boundary node, and the maximizing player
receives the boundary payoff there.

Randomness is counter based: the bits used in ply ``k`` of run ``r`` are a
pure function of ``(master seed, r, k)`` (SplitMix64 finalizer over a Weyl
sequence), so every run can be replayed on its own and runs can be spread
over workers in any order without changing a single result.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_banded

from .errors import ConfigError, PreconditionError, StrategyError
from .grid import BoundaryData, Grid

DEFAULT_MAX_PLIES = 10**6
TRUNCATION_WARNING = 0.05
Z95 = 1.96

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z):
    """SplitMix64 finalizer, vectorized over uint64 arrays (wrapping)."""
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def run_keys(seed: int, runs) -> np.ndarray:
    """Per-run 64-bit keys: mix(mix(seed) + (run + 1) * gamma)."""
    base = _mix(np.array([int(seed) & _MASK], dtype=np.uint64))[0]
    r = np.asarray(runs, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix(base + (r + np.uint64(1)) * _GAMMA)


def ply_bits(keys, ply: int, stream: int = 0) -> np.ndarray:
    """64 random bits for each run key at a given ply; stream 0 is the coin."""
    k = np.uint64((2 * int(ply) + int(stream) + 1) & _MASK)
    with np.errstate(over="ignore"):
        return _mix(np.asarray(keys, dtype=np.uint64) + k * _GAMMA)


def coin(bits) -> np.ndarray:
    """True when the maximizing player wins the toss (top bit set)."""
    return (np.asarray(bits, dtype=np.uint64) >> np.uint64(63)).astype(bool)


def unit_uniform(bits) -> np.ndarray:
    """Uniform [0, 1) doubles from the top 53 bits."""
    return (np.asarray(bits, dtype=np.uint64) >> np.uint64(11)).astype(np.float64) * 2.0**-53


# ----------------------------------------------------------------------------
# configuration and strategies


@dataclass(frozen=True, eq=False)
class GameConfig:
    grid: Grid
    eps: float
    payoff: BoundaryData
    max_plies: int = DEFAULT_MAX_PLIES
    seed: int = 0
    runs: int = 1000
    workers: int = 1

    def validate(self) -> None:
        if not (math.isfinite(self.eps) and self.eps > 0):
            raise ConfigError(f"eps must be positive, got {self.eps}", key="eps")
        if self.eps < self.grid.h * (1 - 1e-9):
            raise ConfigError(f"eps={self.eps} must satisfy eps >= h={self.grid.h}", key="eps")
        if int(self.max_plies) < 1:
            raise ConfigError(f"max_plies must be >= 1, got {self.max_plies}", key="max_plies")
        if int(self.runs) < 1:
            raise ConfigError(f"runs must be >= 1, got {self.runs}", key="runs")
        if int(self.workers) < 1:
            raise ConfigError("workers must be >= 1", key="workers")
        if self.payoff.values.size != self.grid.boundary_idx.size:
            raise ConfigError("payoff does not match the grid's boundary", key="payoff")

    def payoff_field(self) -> np.ndarray:
        """Payoff per node; zero at interior nodes."""
        return self.payoff.field(0.0)


@dataclass(frozen=True)
class GameState:
    node: int
    point: np.ndarray
    ply: int
    role: str
    bits: int  # fresh random bits for randomized strategies


@dataclass(frozen=True, eq=False)
class Strategy:
    """A player's policy.

    ``func`` maps a :class:`GameState` to a move vector.  Built-in strategies
    also carry ``select(nodes, bits) -> targets``, a vectorized form of the
    same policy used by the batch simulator; ``func`` is derived from it so
    the two paths cannot disagree.
    """

    identifier: str
    func: Callable
    select: Optional[Callable] = None


def _interior_rows(grid: Grid) -> np.ndarray:
    rows = np.full(grid.n_nodes, -1, dtype=np.int64)
    rows[grid.interior_idx] = np.arange(grid.interior_idx.size)
    return rows


def _from_select(identifier: str, grid: Grid, select: Callable) -> Strategy:
    def func(state: GameState):
        if not grid.is_interior[state.node]:
            raise PreconditionError(
                f"strategy {identifier!r} called with the token at non-interior node {state.node}"
            )
        target = int(select(np.array([state.node]), np.array([state.bits], dtype=np.uint64))[0])
        return grid.coords[target] - state.point

    return Strategy(identifier, func, select)


def successor_strategy(identifier: str, grid: Grid, successor) -> Strategy:
    """Deterministic strategy given by a successor node per active node."""
    successor = np.asarray(successor, dtype=np.int64)

    def select(nodes, bits):
        return successor[nodes]

    return _from_select(identifier, grid, select)


def _extreme_successors(u, grid: Grid, eps: float, role: str) -> np.ndarray:
    if role not in ("max", "min"):
        raise PreconditionError(f"role must be 'max' or 'min', got {role!r}")
    table = grid.neighbor_table(eps)
    vals = u[table]
    best = vals.max(axis=1) if role == "max" else vals.min(axis=1)
    # smallest node index among the optimal stencil nodes
    cand = np.where(vals == best[:, None], table, np.iinfo(np.int64).max)
    succ = np.arange(grid.n_nodes, dtype=np.int64)
    succ[grid.interior_idx] = cand.min(axis=1)
    return succ


def dpp_strategy(u, grid: Grid, eps: float, role: str) -> Strategy:
    """Move to the argmax (role='max') or argmin of ``u`` over the eps-stencil."""
    u = np.asarray(u, dtype=float)
    if u.shape != (grid.n_nodes,):
        raise PreconditionError(f"field has shape {u.shape}, grid has {grid.n_nodes} nodes")
    return successor_strategy(f"dpp-{role}", grid, _extreme_successors(u, grid, eps, role))


def greedy_strategy(grid: Grid, payoff: BoundaryData, eps: float, role: str) -> Strategy:
    """Pull towards the best payoff as seen through the McShane-Whitney midpoint.

    The midpoint of the two Euclidean envelopes of the payoff is a Lipschitz
    extension that needs no solve; the greedy player steps to its extreme
    over the stencil.  It coincides with the optimal strategy whenever the
    midpoint is itself the game value (affine data in 1D, for instance).
    """
    from .lipschitz import mcshane_whitney

    mid = 0.5 * (mcshane_whitney(grid, payoff, "upper") + mcshane_whitney(grid, payoff, "lower"))
    s = successor_strategy(f"greedy-{role}", grid, _extreme_successors(mid, grid, eps, role))
    return s


def random_strategy(grid: Grid, eps: float, role: str = "any") -> Strategy:
    """Uniformly random node of the clipped stencil (the centre included)."""
    table = grid.neighbor_table(eps)
    rows = _interior_rows(grid)
    uniq = [np.unique(r) for r in table]
    width = max((len(r) for r in uniq), default=1)
    cand = np.zeros((len(uniq), width), dtype=np.int64)
    count = np.zeros(len(uniq), dtype=np.int64)
    for i, r in enumerate(uniq):
        cand[i, : len(r)] = r
        count[i] = len(r)

    def select(nodes, bits):
        row = rows[nodes]
        k = np.minimum((unit_uniform(bits) * count[row]).astype(np.int64), count[row] - 1)
        return cand[row, k]

    return _from_select(f"random-{role}", grid, select)


# ----------------------------------------------------------------------------
# single games


@dataclass
class GameResult:
    exit_node: Optional[int]
    exit_point: Optional[tuple]
    payoff: float
    plies: int
    truncated: bool
    transcript: list = field(default_factory=list)


def _landing_node(grid: Grid, node: int, target_point, eps: float) -> int:
    """Node where a move ends, stopping at the first boundary node crossed."""
    start = grid.coords[node]
    delta = np.asarray(target_point, dtype=float) - start
    length = float(np.linalg.norm(delta))
    if length == 0:
        return node
    n_steps = max(1, int(math.ceil(4 * length / grid.h)))
    shape = np.array(grid.lattice_shape)
    lower = np.asarray(grid.lower, dtype=float)
    for t in np.linspace(0, 1, n_steps + 1)[1:]:
        k = np.rint((start + t * delta - lower) / grid.h).astype(int)
        on_lattice = np.all((k >= 0) & (k < shape))
        cur = int(grid.lattice_to_node[tuple(k)]) if on_lattice else -1
        if cur >= 0 and grid.is_interior[cur]:
            continue
        if cur >= 0:
            return cur
        # left the closed domain without meeting a boundary node on the way:
        # take the stencil boundary node nearest to the exit point
        stencil = np.unique(grid.neighbor_table(eps)[_interior_rows(grid)[node]])
        bnd = stencil[~grid.is_interior[stencil]]
        if bnd.size == 0:
            raise StrategyError(f"move from node {node} leaves the domain with no boundary node in reach")
        d = np.linalg.norm(grid.coords[bnd] - (start + t * delta), axis=1)
        return int(bnd[np.argmin(d)])
    k = np.rint((start + delta - lower) / grid.h).astype(int)
    return int(grid.lattice_to_node[tuple(k)])


def play_game(config: GameConfig, start, max_strategy: Strategy, min_strategy: Strategy,
              seed: Optional[int] = None, run: int = 0, record: bool = False) -> GameResult:
    """Play one game; deterministic in (seed, run).

    ``seed`` defaults to ``config.seed``.  A game that exceeds
    ``config.max_plies`` is truncated with payoff 0.
    """
    config.validate()
    grid = config.grid
    node = grid.node_at(start) if not isinstance(start, (int, np.integer)) else int(start)
    if not grid.is_interior[node]:
        raise PreconditionError(f"start {grid.coords[node].tolist()} is not an interior node")
    key = run_keys(config.seed if seed is None else seed, [run])
    pay = config.payoff_field()
    transcript = [node] if record else []
    limit = config.eps * (1 + 1e-9)
    for ply in range(int(config.max_plies)):
        heads = bool(coin(ply_bits(key, ply, 0))[0])
        strat, role = (max_strategy, "max") if heads else (min_strategy, "min")
        state = GameState(node, grid.coords[node].copy(), ply, role, int(ply_bits(key, ply, 1)[0]))
        move = np.asarray(strat.func(state), dtype=float).reshape(grid.dim)
        if not np.all(np.isfinite(move)) or np.linalg.norm(move) > limit:
            raise StrategyError(
                f"strategy {strat.identifier!r} moved |{np.linalg.norm(move):.6g}| > eps={config.eps} "
                f"from {state.point.tolist()}"
            )
        node = _landing_node(grid, node, state.point + move, config.eps)
        if record:
            transcript.append(node)
        if not grid.is_interior[node]:
            return GameResult(node, tuple(grid.coords[node].tolist()), float(pay[node]), ply + 1, False, transcript)
    return GameResult(None, None, 0.0, int(config.max_plies), True, transcript)


# ----------------------------------------------------------------------------
# batches


@dataclass
class GameStats:
    runs: int
    mean: float
    variance: float
    half_width: float
    mean_plies: float
    truncated: int
    warning: bool = False
    payoffs: np.ndarray = field(default=None, repr=False)
    plies: np.ndarray = field(default=None, repr=False)
    exits: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "runs": self.runs,
            "mean": self.mean,
            "variance": self.variance,
            "half_width": self.half_width,
            "mean_plies": self.mean_plies,
            "truncated": self.truncated,
            "warning": self.warning,
        }


def summarize(payoffs, plies, truncated) -> GameStats:
    """Order-independent statistics (exactly rounded sums via math.fsum)."""
    payoffs = np.asarray(payoffs, dtype=float)
    plies = np.asarray(plies, dtype=np.int64)
    truncated = np.asarray(truncated, dtype=bool)
    runs = payoffs.size
    n_trunc = int(truncated.sum())
    warning = runs > 0 and n_trunc > TRUNCATION_WARNING * runs
    sample = payoffs[~truncated] if warning else payoffs
    n = sample.size
    mean = math.fsum(sample.tolist()) / n if n else math.nan
    var = math.fsum(((sample - mean) ** 2).tolist()) / (n - 1) if n > 1 else 0.0
    return GameStats(
        runs=runs,
        mean=mean,
        variance=var,
        half_width=Z95 * math.sqrt(var / n) if n else math.nan,
        mean_plies=math.fsum(plies.tolist()) / runs if runs else math.nan,
        truncated=n_trunc,
        warning=bool(warning),
        payoffs=payoffs,
        plies=plies,
        exits=None,
    )


def _simulate_batch(config: GameConfig, start: int, max_s: Strategy, min_s: Strategy, runs: np.ndarray):
    grid = config.grid
    keys = run_keys(config.seed, runs)
    pos = np.full(runs.size, start, dtype=np.int64)
    plies = np.zeros(runs.size, dtype=np.int64)
    alive = np.ones(runs.size, dtype=bool)
    interior = grid.is_interior
    for ply in range(int(config.max_plies)):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        k = keys[idx]
        heads = coin(ply_bits(k, ply, 0))
        extra = ply_bits(k, ply, 1)
        cur = pos[idx]
        new = np.empty_like(cur)
        if heads.any():
            new[heads] = max_s.select(cur[heads], extra[heads])
        if (~heads).any():
            new[~heads] = min_s.select(cur[~heads], extra[~heads])
        step = np.linalg.norm(grid.coords[new] - grid.coords[cur], axis=1)
        if np.any(step > config.eps * (1 + 1e-9)):
            bad = int(np.argmax(step))
            name = max_s.identifier if heads[bad] else min_s.identifier
            raise StrategyError(f"strategy {name!r} moved {step[bad]:.6g} > eps={config.eps}")
        pos[idx] = new
        plies[idx] = ply + 1
        alive[idx] = interior[new]
    return pos, plies, alive


def estimate_value(config: GameConfig, start, max_strategy: Strategy, min_strategy: Strategy) -> GameStats:
    """Mean payoff over ``config.runs`` independent games.

    Run ``r`` uses the key derived from ``(config.seed, r)``, so the result
    does not depend on ``config.workers``.  Strategies without a vectorized
    ``select`` are played game by game.
    """
    config.validate()
    grid = config.grid
    node = grid.node_at(start) if not isinstance(start, (int, np.integer)) else int(start)
    if not grid.is_interior[node]:
        raise PreconditionError(f"start {grid.coords[node].tolist()} is not an interior node")
    runs = np.arange(int(config.runs))
    pay = config.payoff_field()
    if max_strategy.select is None or min_strategy.select is None:
        res = [play_game(config, node, max_strategy, min_strategy, run=int(r)) for r in runs]
        payoffs = np.array([g.payoff for g in res])
        plies = np.array([g.plies for g in res])
        trunc = np.array([g.truncated for g in res])
        exits = np.array([-1 if g.exit_node is None else g.exit_node for g in res])
    else:
        chunks = np.array_split(runs, min(int(config.workers), max(1, runs.size)))
        if len(chunks) == 1:
            parts = [_simulate_batch(config, node, max_strategy, min_strategy, chunks[0])]
        else:
            with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
                parts = list(pool.map(lambda c: _simulate_batch(config, node, max_strategy, min_strategy, c), chunks))
        pos = np.concatenate([p[0] for p in parts])
        plies = np.concatenate([p[1] for p in parts])
        trunc = np.concatenate([p[2] for p in parts])
        payoffs = np.where(trunc, 0.0, pay[pos])
        exits = np.where(trunc, -1, pos)
    stats = summarize(payoffs, plies, trunc)
    stats.exits = exits
    return stats


def exact_value_1d(n_states: int, eps_steps: int = 1, payoff_left: float = 0.0,
                   payoff_right: float = 1.0) -> np.ndarray:
    """Gambler's-ruin values of the 1D chain with +-1 state moves.

    States 0 and n_states - 1 are absorbing with the given payoffs; the
    interior satisfies v(i) = (v(i-1) + v(i+1)) / 2, solved directly as a
    tridiagonal system.
    """
    n = int(n_states)
    if n < 3:
        raise PreconditionError(f"need at least 3 states, got {n}")
    if int(eps_steps) != 1:
        raise PreconditionError("only single-cell moves (eps_steps=1) are supported")
    m = n - 2
    ab = np.zeros((3, m))
    ab[0, 1:] = -0.5
    ab[1, :] = 1.0
    ab[2, :-1] = -0.5
    rhs = np.zeros(m)
    rhs[0] += 0.5 * payoff_left
    rhs[-1] += 0.5 * payoff_right
    inner = solve_banded((1, 1), ab, rhs)
    return np.concatenate([[payoff_left], inner, [payoff_right]])
