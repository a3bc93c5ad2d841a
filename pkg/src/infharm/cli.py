"""Command-line front end: ``infharm <command> <config.json> [--out DIR]``.

Exit status: 0 success, 1 a verification check (or the sandwich ordering)
failed, 2 invalid input, 3 a solver or simulation did not converge (its
artifacts are still written and flagged).
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import fieldio
from .analytic import catalog_entry
from .config import COMMANDS, RunConfig, load_config
from .errors import (ConfigError, DomainError, GridError, InfharmError, NonFiniteError,
                     OverflowRiskError, PreconditionError, SchemeError, StrategyError)
from .grid import BoundaryData, Grid, boundary_trace, build_grid

EXIT_OK, EXIT_FAILED, EXIT_INVALID, EXIT_NOT_CONVERGED = 0, 1, 2, 3


# ----------------------------------------------------------------------------
# shared setup

def make_grid(cfg: RunConfig) -> Grid:
    d = cfg.domain
    return build_grid((tuple(d["box"][0]), tuple(d["box"][1])), d["h"], d["shape"])


def make_boundary(cfg: RunConfig, grid: Grid, field=None) -> BoundaryData:
    b = cfg.boundary
    if b is None:
        if field is None:
            raise ConfigError("a boundary source is required", key="boundary")
        return BoundaryData.from_values(grid, field[grid.boundary_idx])
    if "catalog" in b:
        try:
            entry = catalog_entry(b["catalog"], **b["params"])
        except TypeError as exc:
            raise ConfigError(f"bad parameters for {b['catalog']}: {exc}", key="boundary.params") from None
        return boundary_trace(grid, entry)
    return BoundaryData.from_values(grid, fieldio.read_boundary_table(b["table"], grid))


def _eps(value, grid: Grid, key: str) -> float:
    eps = float(value)
    if eps < grid.h * (1 - 1e-9):
        raise ConfigError(f"{key}={eps} violates the rule eps >= h (h={grid.h})", key=key)
    return eps


def _grid_info(grid: Grid) -> dict:
    return {"h": grid.h, "dim": grid.dim, "n_nodes": grid.n_nodes,
            "n_interior": int(grid.interior_idx.size), "shape": {k: v for k, v in grid.shape.items()}}


def _mv_config(cfg: RunConfig, grid: Grid):
    from .mv_solver import MVConfig, SchemeVariant

    s = cfg.solver
    variant = SchemeVariant.plain()
    if s.get("variant") == "upper":
        variant = SchemeVariant.upper(s["delta"])
    elif s.get("variant") == "lower":
        variant = SchemeVariant.lower(s["delta"])
    return MVConfig(
        eps=_eps(s.get("eps", 4 * grid.h), grid, "solver.eps"),
        tolerance=s.get("tolerance", 1e-8),
        max_sweeps=s.get("max_sweeps", 10**6),
        initialization=s.get("initialization", "mw_upper"),
        variant=variant,
        workers=s.get("workers", 1),
    )


def _p_config(cfg: RunConfig):
    from .p_laplace import PSolveConfig

    s = cfg.solver
    kw = {k: s[k] for k in ("tolerance", "max_passes", "method", "energy_tol") if k in s}
    return PSolveConfig(p=s.get("p", 2.0), **kw)


# ----------------------------------------------------------------------------
# commands

def cmd_solve_mv(cfg: RunConfig):
    from .mv_solver import solve_mv

    grid = make_grid(cfg)
    g = make_boundary(cfg, grid)
    mvc = _mv_config(cfg, grid)
    u, rep = solve_mv(grid, g, mvc)
    path = fieldio.write_field(cfg.out_dir / "field.csv", grid, u)
    status = "ok" if rep.converged else "not-converged"
    fieldio.write_json(cfg.out_dir / "report.json", {
        "command": "solve-mv", "status": status, "grid": _grid_info(grid),
        "eps": mvc.eps, "tolerance": mvc.tolerance, "boundary_lipschitz": g.lipschitz,
        "solve": rep.to_dict(),
    })
    print(f"solve-mv: {status} after {rep.sweeps} sweeps (update {rep.update_norm:.3g}); field -> {path}")
    return EXIT_OK if rep.converged else EXIT_NOT_CONVERGED


def cmd_solve_p(cfg: RunConfig):
    from .p_laplace import solve_p

    grid = make_grid(cfg)
    g = make_boundary(cfg, grid)
    pc = _p_config(cfg)
    u, rep = solve_p(grid, g, pc)
    path = fieldio.write_field(cfg.out_dir / "field.csv", grid, u)
    status = "ok" if rep.converged else "not-converged"
    fieldio.write_json(cfg.out_dir / "report.json", {
        "command": "solve-p", "status": status, "grid": _grid_info(grid), "p": pc.p,
        "tolerance": pc.tolerance, "solve": rep.to_dict(),
    })
    print(f"solve-p: p={pc.p:g} {status}, energy {rep.energy:.10g}, {rep.passes} passes; field -> {path}")
    return EXIT_OK if rep.converged else EXIT_NOT_CONVERGED


def cmd_sweep_p(cfg: RunConfig):
    from .mv_solver import solve_mv
    from .p_laplace import p_sweep

    grid = make_grid(cfg)
    g = make_boundary(cfg, grid)
    s = cfg.solver
    ps = [float(p) for p in s.get("ps", [2, 4, 8, 16, 32])]
    mvc = _mv_config(cfg, grid)
    mv, mv_rep = solve_mv(grid, g, mvc)
    entries = p_sweep(grid, g, ps, _p_config(cfg), mv_field=mv,
                      warm_start=bool(s.get("warm_start", True)), workers=s.get("workers", 1))
    exps = (2, 4, 8)
    rows = []
    for e in entries:
        gl = e.diagnostics["grad_Ls"]
        rows.append([e.p, e.diagnostics["energy"], e.diagnostics["distance_to_mv"]]
                    + [gl[k] if k in gl else "" for k in exps])
    path = fieldio.write_table(cfg.out_dir / "sweep.csv",
                               ["p", "energy", "distance_to_mv"] + [f"grad_L{k}" for k in exps], rows)
    ok = mv_rep.converged and all(e.report.converged for e in entries)
    dist = [e.diagnostics["distance_to_mv"] for e in entries]
    fieldio.write_json(cfg.out_dir / "report.json", {
        "command": "sweep-p", "status": "ok" if ok else "not-converged", "grid": _grid_info(grid),
        "eps": mvc.eps, "boundary_lipschitz": g.lipschitz, "mv_solve": mv_rep.to_dict(),
        "entries": [{"p": e.p, "solve": e.report.to_dict(),
                     "distance_to_mv": e.diagnostics["distance_to_mv"],
                     "grad_Ls": {str(k): v for k, v in e.diagnostics["grad_Ls"].items()}} for e in entries],
        "distance_decreasing": bool(all(b < a for a, b in zip(dist, dist[1:]))),
    })
    print(f"sweep-p: {len(entries)} exponents, distance to mv " + " ".join(f"{d:.4g}" for d in dist)
          + f"; table -> {path}")
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def cmd_sandwich(cfg: RunConfig):
    from .mv_solver import solve_sandwich

    grid = make_grid(cfg)
    g = make_boundary(cfg, grid)
    s = cfg.solver
    deltas = [float(d) for d in s.get("deltas", [s.get("delta")])]
    eps = _eps(s["eps"], grid, "solver.eps")
    results = []
    for k, delta in enumerate(deltas):
        try:
            res = solve_sandwich(grid, g, eps, delta, s.get("tolerance", 1e-8), s.get("max_sweeps", 10**6))
        except SchemeError as exc:
            fieldio.write_json(cfg.out_dir / "report.json", {
                "command": "sandwich", "status": "failed", "delta": delta, "error": str(exc)})
            print(f"sandwich: ordering violated for delta={delta}: {exc}")
            return EXIT_FAILED
        tag = "" if len(deltas) == 1 else f"_{k}"
        for name in ("lower", "plain", "upper"):
            fieldio.write_field(cfg.out_dir / f"{name}{tag}.csv", grid, getattr(res, name))
        results.append((delta, res))
    gaps = [r.gap for _, r in results]
    slope = None
    if len(results) > 1 and all(gp > 0 for gp in gaps):
        slope = float(np.polyfit(np.log(deltas), np.log(gaps), 1)[0])
    converged = all(rep.converged for _, r in results for rep in r.reports.values())
    fieldio.write_json(cfg.out_dir / "report.json", {
        "command": "sandwich", "status": "ok" if converged else "not-converged", "grid": _grid_info(grid),
        "eps": eps, "ordered": True, "gap_slope": slope,
        "entries": [dict(r.to_dict(), delta=d) for d, r in results],
    })
    print("sandwich: ordered; gaps " + " ".join(f"{gp:.4g}" for gp in gaps)
          + ("" if slope is None else f"; log-log slope {slope:.3f}"))
    return EXIT_OK if converged else EXIT_NOT_CONVERGED


def cmd_extend(cfg: RunConfig):
    from .lipschitz import lipschitz_constant, mcshane_whitney

    grid = make_grid(cfg)
    g = make_boundary(cfg, grid)
    up = mcshane_whitney(grid, g, "upper")
    lo = mcshane_whitney(grid, g, "lower")
    fieldio.write_field(cfg.out_dir / "mw_upper.csv", grid, up)
    fieldio.write_field(cfg.out_dir / "mw_lower.csv", grid, lo)
    rep = {"command": "extend", "status": "ok", "grid": _grid_info(grid), "boundary_lipschitz": g.lipschitz,
           "ordered": bool(np.all(lo <= up))}
    if grid.n_nodes <= 20000:
        rep["lipschitz_upper"] = lipschitz_constant(up, grid)
        rep["lipschitz_lower"] = lipschitz_constant(lo, grid)
    fieldio.write_json(cfg.out_dir / "report.json", rep)
    print(f"extend: L = {g.lipschitz:.6g}; envelopes -> {cfg.out_dir}")
    return EXIT_OK


def _subdomain(grid: Grid, spec, key):
    from .lipschitz import nodes_in_ball

    if spec is None:
        return np.arange(grid.n_nodes)
    if not isinstance(spec, dict) or "center" not in spec or "radius" not in spec:
        raise ConfigError("subdomain must be {center: [...], radius: r}", key=key)
    nodes = nodes_in_ball(grid, spec["center"], float(spec["radius"]))
    if nodes.size == 0:
        raise ConfigError("subdomain contains no nodes", key=key)
    return nodes


def _run_check(item: dict, i: int, u, grid: Grid, g: BoundaryData, cfg: RunConfig) -> list:
    from . import lipschitz as lz
    from .mv_solver import MVConfig

    name = item["name"]
    key = f"checks[{i}]"
    c = float(item.get("c", 1.0))
    try:
        if name == "max-principle":
            return [lz.check_maximum_principle(u, grid, g, float(item.get("tol", 1e-9)))]
        if name == "cone-suite" or (name == "cone-comparison" and "apex" not in item):
            return [lz.cone_suite(u, grid, int(item.get("n_cones", 20)), int(item.get("n_subdomains", 5)),
                                  int(item.get("seed", cfg.seed)), c, float(item.get("slope", 2.0)))]
        if name == "cone-comparison":
            nodes = _subdomain(grid, item.get("subdomain"), f"{key}.subdomain")
            sides = ("above", "below") if item.get("side", "both") == "both" else (item["side"],)
            return [lz.check_cone_comparison(u, grid, nodes, item["apex"], float(item.get("b", 1.0)), s, c)
                    for s in sides]
        if name == "harnack":
            return [lz.check_harnack(u, grid, item["x0"], float(item["r"]), float(item["R"]),
                                     item.get("form", "factor3"), item.get("slack"))]
        if name == "three-spheres":
            _, rep = lz.sphere_profile(u, grid, item["x0"], item["radii"], item.get("mode", "max"), c)
            return [rep]
        if name == "amle":
            nodes = _subdomain(grid, item.get("subdomain"), f"{key}.subdomain")
            mvc = MVConfig(eps=_eps(item.get("eps", cfg.solver.get("eps", 4 * grid.h)), grid, f"{key}.eps"))
            return [lz.check_amle(u, grid, nodes, mvc, int(item.get("n_competitors", 20)),
                                  int(item.get("seed", cfg.seed)), c)]
        if name == "lipschitz":
            L = lz.lipschitz_constant(u, grid)
            return [lz._report("lipschitz", L - g.lipschitz, c * grid.h, [], {"c": c},
                               {"lipschitz_u": L, "boundary_lipschitz": g.lipschitz})]
    except KeyError as exc:
        raise ConfigError(f"check {name!r} is missing parameter {exc.args[0]!r}", key=f"{key}.{exc.args[0]}") from None
    raise ConfigError(f"unknown check {name!r}", key=key)


def cmd_verify(cfg: RunConfig):
    grid = make_grid(cfg)
    u = fieldio.read_field(cfg.field_path, grid)
    g = make_boundary(cfg, grid, field=u)
    reports = []
    for i, item in enumerate(cfg.checks):
        reports.extend(_run_check(item, i, u, grid, g, cfg))
    ok = all(r.passed for r in reports)
    fieldio.write_json(cfg.out_dir / "report.json", {
        "command": "verify", "status": "pass" if ok else "fail", "grid": _grid_info(grid),
        "checks": [r.to_dict() for r in reports],
    })
    print("verify: " + ", ".join(f"{r.name} {'pass' if r.passed else 'FAIL'}" for r in reports))
    return EXIT_OK if ok else EXIT_FAILED


def _strategy(spec: str, role: str, grid: Grid, g: BoundaryData, eps: float):
    from . import tug_of_war as tw

    if spec == "greedy":
        return tw.greedy_strategy(grid, g, eps, role)
    if spec == "random":
        return tw.random_strategy(grid, eps, role)
    u = fieldio.read_field(spec.partition(":")[2], grid)
    return tw.dpp_strategy(u, grid, eps, role)


def cmd_tug_of_war(cfg: RunConfig):
    from . import tug_of_war as tw

    grid = make_grid(cfg)
    g = make_boundary(cfg, grid)
    gm = cfg.game
    eps = _eps(gm.get("eps", cfg.solver.get("eps", 4 * grid.h)), grid, "game.eps")
    start = gm.get("start")
    if start is None:
        lo, hi = np.array(cfg.domain["box"][0], float), np.array(cfg.domain["box"][1], float)
        start = grid.coords[grid.interior_idx[np.argmin(
            np.linalg.norm(grid.coords[grid.interior_idx] - (lo + hi) / 2, axis=1))]].tolist()
    try:
        node = grid.node_at(start)
    except GridError as exc:
        raise ConfigError(f"game.start: {exc}", key="game.start") from None
    if not grid.is_interior[node]:
        raise ConfigError(f"game.start {list(start)} is not an interior node", key="game.start")
    gc = tw.GameConfig(grid, eps, g, int(gm.get("max_plies", tw.DEFAULT_MAX_PLIES)),
                       int(gm.get("seed", cfg.seed)), int(gm.get("runs", 1000)), int(gm.get("workers", 1)))
    mx = _strategy(gm.get("max_strategy", "greedy"), "max", grid, g, eps)
    mn = _strategy(gm.get("min_strategy", "greedy"), "min", grid, g, eps)
    stats = tw.estimate_value(gc, node, mx, mn)
    fieldio.write_json(cfg.out_dir / "report.json", {
        "command": "tug-of-war", "status": "truncated" if stats.warning else "ok",
        "grid": _grid_info(grid), "eps": eps, "start": grid.coords[node].tolist(), "seed": gc.seed,
        "max_plies": gc.max_plies, "max_strategy": mx.identifier, "min_strategy": mn.identifier,
        "stats": stats.to_dict(),
    })
    if gm.get("transcript"):
        names = fieldio.coord_names(grid.dim)
        rows = []
        for r in range(stats.runs):
            e = int(stats.exits[r])
            pt = grid.coords[e].tolist() if e >= 0 else [math.nan] * grid.dim
            rows.append([r] + [float(v) for v in pt] + [float(stats.payoffs[r]), int(stats.plies[r]), int(e < 0)])
        fieldio.write_table(cfg.out_dir / "transcript.csv",
                            ["run"] + [f"exit_{n}" for n in names] + ["payoff", "plies", "truncated"], rows)
    print(f"tug-of-war: mean {stats.mean:.6g} +/- {stats.half_width:.3g} over {stats.runs} runs "
          f"({stats.truncated} truncated)")
    return EXIT_NOT_CONVERGED if stats.warning else EXIT_OK


def cmd_residual(cfg: RunConfig):
    from .mv_solver import residual_field

    grid = make_grid(cfg)
    u = fieldio.read_field(cfg.field_path, grid)
    eps = _eps(cfg.solver["eps"], grid, "solver.eps")
    r = residual_field(u, grid, eps)
    path = fieldio.write_field(cfg.out_dir / "residual.csv", grid, r)
    k = int(np.argmax(np.abs(r)))
    fieldio.write_json(cfg.out_dir / "report.json", {
        "command": "residual", "status": "ok", "grid": _grid_info(grid), "eps": eps,
        "max_abs_residual": float(abs(r[k])), "location": grid.coords[k].tolist(),
    })
    print(f"residual: max |u - (max+min)/2| = {abs(r[k]):.3g} at {grid.coords[k].tolist()}; field -> {path}")
    return EXIT_OK


HANDLERS = {
    "solve-mv": cmd_solve_mv,
    "solve-p": cmd_solve_p,
    "sweep-p": cmd_sweep_p,
    "sandwich": cmd_sandwich,
    "extend": cmd_extend,
    "verify": cmd_verify,
    "tug-of-war": cmd_tug_of_war,
    "residual": cmd_residual,
}


def run(cfg: RunConfig) -> int:
    return HANDLERS[cfg.command](cfg)


# ----------------------------------------------------------------------------
# argument parsing

def _point(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="infharm", description="Infinity-harmonic toolkit")
    sub = ap.add_subparsers(dest="command", required=True, metavar="command")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="JSON run configuration")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        if name == "tug-of-war":
            p.add_argument("--start", type=_point, help="start node, e.g. 0.5,0.5")
            p.add_argument("--eps", type=float)
            p.add_argument("--runs", type=int)
            p.add_argument("--seed", type=int)
            p.add_argument("--max-plies", type=int)
            p.add_argument("--workers", type=int)
            p.add_argument("--max-strategy", help="greedy | random | dpp:<field.csv>")
            p.add_argument("--min-strategy", help="greedy | random | dpp:<field.csv>")
            p.add_argument("--payoff", help="catalog id for the boundary payoff")
            p.add_argument("--payoff-table", help="boundary table CSV for the payoff")
            p.add_argument("--transcript", action="store_true", help="write per-run transcript.csv")
    return ap


def _apply_overrides(doc: dict, args) -> dict:
    game = dict(doc.get("game", {}))
    for flag, key in (("start", "start"), ("eps", "eps"), ("runs", "runs"), ("seed", "seed"),
                      ("max_plies", "max_plies"), ("workers", "workers"),
                      ("max_strategy", "max_strategy"), ("min_strategy", "min_strategy")):
        v = getattr(args, flag)
        if v is not None:
            game[key] = v
    if args.transcript:
        game["transcript"] = True
    doc = dict(doc, game=game)
    if args.payoff and args.payoff_table:
        raise ConfigError("use only one of --payoff and --payoff-table", key="boundary")
    if args.payoff:
        doc["boundary"] = {"catalog": args.payoff}
    if args.payoff_table:
        doc["boundary"] = {"table": str(Path(args.payoff_table).resolve())}
    return doc


def main(argv=None) -> int:
    import json

    from .config import parse_config

    args = build_parser().parse_args(argv)
    try:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file {args.config!r} does not exist", key="config")
        if args.command == "tug-of-war":
            try:
                doc = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"malformed JSON in {path}: {exc}", key="config") from None
            if isinstance(doc, dict):
                doc = _apply_overrides(doc, args)
            cfg = parse_config(doc, args.command, path.parent, None if args.out is None else Path(args.out))
        else:
            cfg = load_config(path, args.command, args.out)
        return run(cfg)
    except ConfigError as exc:
        key = f" [{exc.key}]" if exc.key else ""
        print(f"infharm: error{key}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (GridError, DomainError, PreconditionError, NonFiniteError, OverflowRiskError) as exc:
        print(f"infharm: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (StrategyError, SchemeError) as exc:
        print(f"infharm: failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except InfharmError as exc:  # pragma: no cover - future error types
        print(f"infharm: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
