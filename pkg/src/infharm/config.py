"""Run configuration: one JSON document per CLI invocation.

Relative paths inside a config are resolved against the config file's
directory.  Validation errors carry the dotted key of the offending entry.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError

COMMANDS = ("solve-mv", "solve-p", "sweep-p", "sandwich", "extend", "verify", "tug-of-war", "residual")
CHECKS = ("max-principle", "cone-comparison", "cone-suite", "harnack", "three-spheres", "amle", "lipschitz")
STRATEGIES = ("greedy", "random", "dpp")

# which commands need boundary data and which need an input field
NEEDS_BOUNDARY = {"solve-mv", "solve-p", "sweep-p", "sandwich", "extend", "tug-of-war"}
NEEDS_FIELD = {"verify", "residual"}

_KNOWN_TOP = {"format_version", "command", "domain", "boundary", "field", "solver", "checks",
              "game", "seed", "output"}


@dataclass
class RunConfig:
    command: str
    domain: dict
    boundary: Optional[dict] = None
    field_path: Optional[Path] = None
    solver: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    game: dict = field(default_factory=dict)
    seed: int = 0
    out_dir: Path = Path("out")
    base: Path = Path(".")


def _num(d: dict, key: str, prefix: str, lo=None, hi=None, integer=False, default=None, strict_lo=False):
    if key not in d:
        if default is None:
            return None
        return default
    v = d[key]
    name = f"{prefix}.{key}" if prefix else key
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{name} must be a number, got {v!r}", key=name)
    if integer and int(v) != v:
        raise ConfigError(f"{name} must be an integer, got {v!r}", key=name)
    if not math.isfinite(v):
        raise ConfigError(f"{name} must be finite", key=name)
    if lo is not None and (v <= lo if strict_lo else v < lo):
        raise ConfigError(f"{name}={v} must be {'>' if strict_lo else '>='} {lo}", key=name)
    if hi is not None and v > hi:
        raise ConfigError(f"{name}={v} must be <= {hi}", key=name)
    return int(v) if integer else float(v)


def _path(base: Path, value, key: str) -> Path:
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a path string", key=key)
    p = Path(value)
    p = p if p.is_absolute() else base / p
    if not p.exists():
        raise ConfigError(f"{key}: file {value!r} does not exist", key=key)
    return p


def _check_domain(d, base: Path) -> dict:
    if not isinstance(d, dict):
        raise ConfigError("domain must be an object", key="domain")
    for k in ("box", "h"):
        if k not in d:
            raise ConfigError(f"domain.{k} is required", key=f"domain.{k}")
    box = d["box"]
    if (not isinstance(box, list) or len(box) != 2 or not all(isinstance(b, list) for b in box)
            or len(box[0]) != len(box[1]) or not box[0]):
        raise ConfigError("domain.box must be [[lower...], [upper...]]", key="domain.box")
    h = _num(d, "h", "domain", lo=0, strict_lo=True)
    shape = dict(d.get("shape") or {"type": "rectangle"})
    if shape.get("type") == "mask":
        if "path" not in shape:
            raise ConfigError("mask domains need domain.shape.path", key="domain.shape.path")
        shape["path"] = str(_path(base, shape["path"], "domain.shape.path"))
    unknown = set(d) - {"box", "h", "shape"}
    if unknown:
        raise ConfigError(f"unknown domain key(s) {sorted(unknown)}", key=f"domain.{sorted(unknown)[0]}")
    return {"box": box, "h": h, "shape": shape}


def _check_boundary(b, base: Path) -> dict:
    if not isinstance(b, dict):
        raise ConfigError("boundary must be an object", key="boundary")
    sources = [k for k in ("catalog", "table") if k in b]
    if len(sources) != 1:
        raise ConfigError("boundary needs exactly one source: 'catalog' or 'table'", key="boundary")
    if "catalog" in b:
        from .analytic import CATALOG_IDS

        if b["catalog"] not in CATALOG_IDS:
            raise ConfigError(f"unknown catalog id {b['catalog']!r}", key="boundary.catalog")
        params = b.get("params", {})
        if not isinstance(params, dict):
            raise ConfigError("boundary.params must be an object", key="boundary.params")
        return {"catalog": b["catalog"], "params": params}
    return {"table": _path(base, b["table"], "boundary.table")}


def _check_solver(s: dict, command: str) -> dict:
    if not isinstance(s, dict):
        raise ConfigError("solver must be an object", key="solver")
    out = dict(s)
    for key, kw in (("eps", dict(lo=0, strict_lo=True)), ("tolerance", dict(lo=0, strict_lo=True)),
                    ("delta", dict(lo=0, strict_lo=True)), ("p", dict(lo=2, hi=64)),
                    ("max_sweeps", dict(lo=1, integer=True)), ("max_passes", dict(lo=1, integer=True)),
                    ("workers", dict(lo=1, integer=True))):
        if key in s:
            out[key] = _num(s, key, "solver", **kw)
    if "ps" in s:
        ps = s["ps"]
        if not isinstance(ps, list) or not ps:
            raise ConfigError("solver.ps must be a non-empty list", key="solver.ps")
        for i, p in enumerate(ps):
            _num({"p": p}, "p", f"solver.ps[{i}]", lo=2, hi=64)
        if ps != sorted(ps):
            raise ConfigError("solver.ps must be ascending", key="solver.ps")
    if "deltas" in s:
        ds = s["deltas"]
        if not isinstance(ds, list) or not ds:
            raise ConfigError("solver.deltas must be a non-empty list", key="solver.deltas")
        for i, d in enumerate(ds):
            _num({"d": d}, "d", f"solver.deltas[{i}]", lo=0, strict_lo=True)
    if command in ("solve-mv", "sandwich", "residual") and "eps" not in s:
        raise ConfigError(f"{command} needs solver.eps", key="solver.eps")
    if command == "sandwich" and "delta" not in s and "deltas" not in s:
        raise ConfigError("sandwich needs solver.delta or solver.deltas", key="solver.delta")
    if "variant" in s and s["variant"] not in ("plain", "upper", "lower"):
        raise ConfigError(f"unknown variant {s['variant']!r}", key="solver.variant")
    if s.get("variant") in ("upper", "lower") and "delta" not in s:
        raise ConfigError(f"variant {s['variant']} needs solver.delta", key="solver.delta")
    return out


def _check_checks(items) -> list:
    if not isinstance(items, list) or not items:
        raise ConfigError("verify needs a non-empty 'checks' list", key="checks")
    out = []
    for i, it in enumerate(items):
        if isinstance(it, str):
            it = {"name": it}
        if not isinstance(it, dict) or it.get("name") not in CHECKS:
            name = it.get("name") if isinstance(it, dict) else it
            raise ConfigError(f"unknown check {name!r}; known: {', '.join(CHECKS)}", key=f"checks[{i}]")
        out.append(it)
    return out


def _check_game(g, base: Path) -> dict:
    if not isinstance(g, dict):
        raise ConfigError("game must be an object", key="game")
    out = dict(g)
    for key, kw in (("eps", dict(lo=0, strict_lo=True)), ("runs", dict(lo=1, integer=True)),
                    ("max_plies", dict(lo=1, integer=True)), ("seed", dict(lo=0, integer=True)),
                    ("workers", dict(lo=1, integer=True))):
        if key in g:
            out[key] = _num(g, key, "game", **kw)
    if "start" in g and (not isinstance(g["start"], list) or not g["start"]):
        raise ConfigError("game.start must be a list of coordinates", key="game.start")
    for role in ("max_strategy", "min_strategy"):
        spec = g.get(role, "greedy")
        if not isinstance(spec, str):
            raise ConfigError(f"game.{role} must be a string", key=f"game.{role}")
        kind, _, arg = spec.partition(":")
        if kind not in STRATEGIES:
            raise ConfigError(f"unknown strategy {spec!r}; use greedy, random or dpp:<field-file>",
                              key=f"game.{role}")
        if kind == "dpp":
            if not arg:
                raise ConfigError("dpp strategy needs a field file: dpp:<path>", key=f"game.{role}")
            out[role] = f"dpp:{_path(base, arg, f'game.{role}')}"
        else:
            out[role] = kind
    return out


def parse_config(doc: dict, command: Optional[str] = None, base: Path = Path("."),
                 out_dir: Optional[Path] = None) -> RunConfig:
    """Validate a decoded config document; ``command`` overrides its field."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object", key="config")
    unknown = set(doc) - _KNOWN_TOP
    if unknown:
        k = sorted(unknown)[0]
        raise ConfigError(f"unknown config key {k!r}", key=k)
    if "format_version" in doc and doc["format_version"] != 1:
        raise ConfigError(f"unsupported format_version {doc['format_version']!r}", key="format_version")
    cmd = command or doc.get("command")
    if cmd not in COMMANDS:
        raise ConfigError(f"unknown command {cmd!r}; known: {', '.join(COMMANDS)}", key="command")
    if command and doc.get("command") not in (None, command):
        raise ConfigError(f"config is for {doc['command']!r}, not {command!r}", key="command")
    if "domain" not in doc:
        raise ConfigError("domain is required", key="domain")
    domain = _check_domain(doc["domain"], base)
    boundary = None
    if "boundary" in doc:
        boundary = _check_boundary(doc["boundary"], base)
    elif cmd in NEEDS_BOUNDARY:
        raise ConfigError(f"{cmd} needs a boundary source", key="boundary")
    fld = None
    if cmd in NEEDS_FIELD and "field" in doc:
        fld = _path(base, doc["field"], "field")
    elif cmd in NEEDS_FIELD:
        raise ConfigError(f"{cmd} needs an input 'field' file", key="field")
    solver = _check_solver(doc.get("solver", {}), cmd)
    checks = _check_checks(doc.get("checks")) if cmd == "verify" else []
    game = _check_game(doc.get("game", {}), base) if cmd == "tug-of-war" else {}
    seed = _num(doc, "seed", "", lo=0, integer=True, default=0)
    if out_dir is None:
        out = doc.get("output", {}).get("dir", "out") if isinstance(doc.get("output", {}), dict) else "out"
        out_dir = Path(out) if Path(out).is_absolute() else base / out
    return RunConfig(cmd, domain, boundary, fld, solver, checks, game, seed, Path(out_dir), base)


def load_config(path, command: Optional[str] = None, out_dir=None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} does not exist", key="config")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}", key="config") from None
    return parse_config(doc, command, path.parent, None if out_dir is None else Path(out_dir))
