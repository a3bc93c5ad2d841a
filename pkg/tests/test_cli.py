import json
from importlib import resources

import jsonschema
import numpy as np
import pytest

from infharm.cli import main
from infharm.fieldio import read_field, write_field
from infharm.grid import build_grid

LINE = {
    "format_version": 1,
    "domain": {"box": [[0], [1]], "h": 0.03125},
    "boundary": {"catalog": "affine", "params": {"a": [1.0], "b": 0.0}},
    "solver": {"eps": 0.03125, "tolerance": 1e-12, "ps": [2, 4, 8], "delta": 0.1},
    "checks": ["max-principle", {"name": "cone-comparison", "apex": [2.0], "b": 1.0,
                                 "subdomain": {"center": [0.5], "radius": 0.25}}],
    "field": "solve/field.csv",
    "game": {"start": [0.5], "runs": 500, "seed": 7},
}

SQUARE = {
    "domain": {"box": [[0, 0], [1, 1]], "h": 0.0625},
    "boundary": {"catalog": "cone", "params": {"apex": [-0.5, -0.5]}},
    "solver": {"eps": 0.125},
    "game": {"runs": 300, "seed": 3, "transcript": True},
}


def schema(name):
    return json.loads(resources.files("infharm").joinpath("schemas", name).read_text())


def write_cfg(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def run(tmp_path, command, doc, out, *extra):
    return main([command, write_cfg(tmp_path, doc), "--out", str(tmp_path / out), *extra])


def report(tmp_path, out):
    doc = json.loads((tmp_path / out / "report.json").read_text())
    jsonschema.validate(doc, schema("report.schema.json"))
    return doc


def test_solve_then_verify_1d(tmp_path, capsys):
    assert run(tmp_path, "solve-mv", LINE, "solve") == 0
    assert "solve-mv: ok" in capsys.readouterr().out
    grid = build_grid(((0.0,), (1.0,)), 0.03125)
    u = read_field(tmp_path / "solve" / "field.csv", grid)
    assert np.max(np.abs(u - grid.coords[:, 0])) <= 1e-6
    assert report(tmp_path, "solve")["status"] == "ok"
    assert run(tmp_path, "verify", LINE, "verify") == 0
    rep = report(tmp_path, "verify")
    assert rep["status"] == "pass" and len(rep["checks"]) == 3
    assert all(c["passed"] for c in rep["checks"])


def test_eps_below_h_is_rejected(tmp_path, capsys):
    doc = dict(LINE, solver={"eps": 0.01})
    assert run(tmp_path, "solve-mv", doc, "o") == 2
    err = capsys.readouterr().err
    assert "eps >= h" in err and "solver.eps" in err


@pytest.mark.parametrize("doc,key", [
    ({"domain": {"box": [[0], [1]], "h": 0.1}}, "boundary"),
    (dict(LINE, solver={"eps": 0.05, "tolerance": -1}), "solver.tolerance"),
    (dict(LINE, boundary={"catalog": "nope"}), "boundary.catalog"),
    (dict(LINE, boundary={"catalog": "affine", "table": "x.csv"}), "boundary"),
    (dict(LINE, bogus=1), "bogus"),
    (dict(LINE, domain={"box": [[0], [1]]}), "domain.h"),
])
def test_validation_errors_name_the_key(tmp_path, capsys, doc, key):
    assert run(tmp_path, "solve-mv", doc, "o") == 2
    assert f"[{key}]" in capsys.readouterr().err


def test_malformed_and_missing_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["solve-mv", str(bad)]) == 2
    assert main(["solve-mv", str(tmp_path / "missing.json")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate", str(bad)])
    assert exc.value.code == 2


def test_non_convergence_exit_3_field_written(tmp_path):
    doc = dict(SQUARE, solver={"eps": 0.125, "max_sweeps": 2})
    assert run(tmp_path, "solve-mv", doc, "nc") == 3
    assert (tmp_path / "nc" / "field.csv").exists()
    assert report(tmp_path, "nc")["status"] == "not-converged"


def test_all_commands_write_artifacts(tmp_path):
    assert run(tmp_path, "solve-mv", LINE, "solve") == 0
    assert run(tmp_path, "solve-p", dict(LINE, solver={"p": 4}), "p") == 0
    assert run(tmp_path, "sweep-p", LINE, "sweep") == 0
    assert run(tmp_path, "sandwich", LINE, "sand") == 0
    assert run(tmp_path, "extend", LINE, "ext") == 0
    assert run(tmp_path, "residual", LINE, "res") == 0
    assert run(tmp_path, "tug-of-war", LINE, "game") == 0
    for out, files in {"p": ["field.csv"], "sweep": ["sweep.csv"], "sand": ["lower.csv", "upper.csv"],
                       "ext": ["mw_upper.csv", "mw_lower.csv"], "res": ["residual.csv"], "game": []}.items():
        report(tmp_path, out)
        for f in files:
            assert (tmp_path / out / f).read_text().startswith("# format_version: 1\n")
    sweep = report(tmp_path, "sweep")
    assert [e["p"] for e in sweep["entries"]] == [2, 4, 8]


def test_tug_of_war_flags_and_determinism(tmp_path):
    for out, workers in (("a", "1"), ("b", "3")):
        assert run(tmp_path, "tug-of-war", SQUARE, out, "--start", "0.5,0.5", "--workers", workers) == 0
    for f in ("report.json", "transcript.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    stats = report(tmp_path, "a")["stats"]
    assert stats["runs"] == 300 and 1.0 <= stats["mean"] <= 1.6
    assert run(tmp_path, "tug-of-war", SQUARE, "c", "--seed", "4") == 0
    assert report(tmp_path, "c")["seed"] == 4


def test_tug_of_war_dpp_and_truncation(tmp_path):
    assert run(tmp_path, "solve-mv", SQUARE, "solve") == 0
    field = str(tmp_path / "solve" / "field.csv")
    assert run(tmp_path, "tug-of-war", SQUARE, "dpp", "--max-strategy", f"dpp:{field}",
               "--min-strategy", f"dpp:{field}") == 0
    assert report(tmp_path, "dpp")["max_strategy"] == "dpp-max"
    assert run(tmp_path, "tug-of-war", SQUARE, "trunc", "--max-plies", "1", "--max-strategy", "random",
               "--min-strategy", "random") == 3
    assert report(tmp_path, "trunc")["status"] == "truncated"
    assert run(tmp_path, "tug-of-war", SQUARE, "bad", "--max-strategy", "clever") == 2


def test_pipeline_determinism(tmp_path):
    for out in ("one", "two"):
        assert run(tmp_path, "solve-mv", SQUARE, out) == 0
    for f in ("field.csv", "report.json"):
        assert (tmp_path / "one" / f).read_bytes() == (tmp_path / "two" / f).read_bytes()


def test_field_round_trip_bytes(tmp_path):
    grid = build_grid(((0, 0), (1, 1)), 1 / 8)
    rng = np.random.default_rng(0)
    u = rng.normal(size=grid.n_nodes) * 10.0 ** rng.integers(-300, 300, grid.n_nodes)
    a = write_field(tmp_path / "a.csv", grid, u)
    b = write_field(tmp_path / "b.csv", grid, read_field(a, grid))
    assert a.read_bytes() == b.read_bytes()


def test_table_boundary_source(tmp_path):
    grid = build_grid(((0.0,), (1.0,)), 0.25)
    table = tmp_path / "bnd.csv"
    table.write_text("# format_version: 1\nx,value\n0,2\n1,4\n")
    doc = {"domain": {"box": [[0], [1]], "h": 0.25}, "boundary": {"table": "bnd.csv"},
           "solver": {"eps": 0.25, "tolerance": 1e-13}}
    assert run(tmp_path, "solve-mv", doc, "t") == 0
    u = read_field(tmp_path / "t" / "field.csv", grid)
    np.testing.assert_allclose(u, 2 + 2 * grid.coords[:, 0], atol=1e-10)
    table.write_text("# format_version: 1\nx,value\n0,2\n0.5,4\n")
    assert run(tmp_path, "solve-mv", doc, "t2") == 2


def test_config_schema_accepts_examples():
    s = schema("config.schema.json")
    for doc in (LINE, SQUARE):
        jsonschema.validate(doc, s)
