import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from infharm import ConfigError, PreconditionError
from infharm.grid import BoundaryData, boundary_trace, build_grid
from infharm.mv_solver import (MVConfig, SchemeVariant, mv_sweep, residual_field, solve_mv,
                               solve_sandwich)


def seg(h=0.25):
    g = build_grid(((0.0,), (1.0,)), h)
    return g


def test_sweep_examples():
    g = seg()
    cfg = MVConfig(eps=0.25)
    x = g.coords[:, 0]
    np.testing.assert_array_equal(mv_sweep(x, g, cfg), x)
    np.testing.assert_array_equal(mv_sweep(np.full(5, 0.7), g, cfg), np.full(5, 0.7))
    out = mv_sweep(np.array([0, 0, 0, 0, 1.0]), g, cfg)
    np.testing.assert_array_equal(out, [0, 0, 0, 0.5, 1.0])


def test_sweep_checks_shape():
    with pytest.raises(PreconditionError):
        mv_sweep(np.zeros(3), seg(), MVConfig(eps=0.25))


def test_solve_1d_linear(segment):
    grid, g = segment
    u, rep = solve_mv(grid, g, MVConfig(eps=grid.h))
    assert rep.converged and not rep.truncated
    np.testing.assert_allclose(u, grid.coords[:, 0], atol=1e-12)


def test_solve_cone_regression(square32, cone_outside):
    g = boundary_trace(square32, cone_outside)
    u, rep = solve_mv(square32, g, MVConfig(eps=4 * square32.h))
    err = np.max(np.abs(u - cone_outside(square32.coords))[square32.interior_idx])
    assert rep.converged and rep.monotone and rep.direction == "non-increasing"
    assert err <= 0.05
    # discrete maximum principle
    assert g.min - 1e-12 <= u.min() and u.max() <= g.max + 1e-12


def test_truncation_flag(square16, cone_outside):
    g = boundary_trace(square16, cone_outside)
    u, rep = solve_mv(square16, g, MVConfig(eps=2 * square16.h, max_sweeps=3))
    assert rep.truncated and not rep.converged and rep.sweeps == 3
    assert np.all(np.isfinite(u))


def test_perron_limits_agree(square16):
    # both monotone sequences bracket the fixed point; solve 100x tighter than
    # the comparison tolerance because the stopping rule bounds the update only
    g = boundary_trace(square16, lambda x: np.sin(3 * x[0]) + x[1] ** 2)
    tol = 1e-8
    a, ra = solve_mv(square16, g, MVConfig(eps=2 * square16.h, tolerance=tol / 100))
    b, rb = solve_mv(square16, g, MVConfig(eps=2 * square16.h, tolerance=tol / 100, initialization="mw_lower"))
    assert ra.direction == "non-increasing" and rb.direction == "non-decreasing"
    assert np.max(np.abs(a - b)) <= 2 * tol
    c, rc = solve_mv(square16, g, MVConfig(eps=2 * square16.h, tolerance=tol / 100, initialization="boundary_mean"))
    assert np.max(np.abs(a - c)) <= 2 * tol


def test_residual_examples():
    g = seg(1 / 16)
    x = g.coords[:, 0]
    r = residual_field(0.5 * x**2, g, g.h)
    np.testing.assert_allclose(r[g.interior_idx], -g.h**2 / 2, rtol=1e-12)
    assert np.all(r[g.boundary_idx] == 0)
    # 1D cone away from its apex: max and min are symmetric
    cone = np.abs(x + 0.5)
    full = (x >= 2 * g.h) & (x <= 1 - 2 * g.h)  # unclipped balls
    assert np.max(np.abs(residual_field(cone, g, 2 * g.h))[full]) < 1e-15


def test_residual_at_fixed_point(square16, cone_outside):
    g = boundary_trace(square16, cone_outside)
    cfg = MVConfig(eps=3 * square16.h, tolerance=1e-10)
    u, _ = solve_mv(square16, g, cfg)
    assert np.max(np.abs(residual_field(u, square16, cfg.eps))) <= 1e-10


def _brute_upper(n, h, delta):
    # independent Gauss-Seidel loop for u = (max + min)/2 + h^2 delta / 2 on
    # the 3-point stencil with zero boundary values
    u = [0.0] * (n + 1)
    for _ in range(200000):
        change = 0.0
        for i in range(1, n):
            nb = (u[i - 1], u[i], u[i + 1])
            new = 0.5 * (max(nb) + min(nb)) + 0.5 * h * h * delta
            change = max(change, abs(new - u[i]))
            u[i] = new
        if change < 1e-15:
            break
    return np.array(u)


def test_sandwich_1d_zero_data():
    h = 1 / 32
    grid = build_grid(((0.0,), (1.0,)), h)
    g = boundary_trace(grid, lambda x: 0.0)
    res = solve_sandwich(grid, g, h, 1.0, tol=1e-13)
    inner = grid.interior_idx
    assert np.all(res.upper[inner] > 0) and np.all(res.lower[inner] < 0)
    np.testing.assert_array_equal(res.plain, 0.0)
    oracle = _brute_upper(32, h, 1.0)
    np.testing.assert_allclose(res.upper, oracle, atol=1e-9)
    np.testing.assert_allclose(res.lower, -oracle, atol=1e-9)
    half = solve_sandwich(grid, g, h, 0.5, tol=1e-13)
    assert res.gap >= half.gap


def test_sandwich_ordering_2d(square16, cone_outside):
    g = boundary_trace(square16, cone_outside)
    res = solve_sandwich(square16, g, 2 * square16.h, 0.25, tol=1e-10)
    assert np.all(res.lower <= res.plain) and np.all(res.plain <= res.upper)
    assert res.gap > 0 and res.constant > 0
    assert set(res.to_dict()["reports"]) == {"lower", "plain", "upper"}


def test_poisson_matches_shifted_variant(segment):
    grid, g = segment
    up, _ = solve_mv(grid, g, MVConfig(eps=grid.h, tolerance=1e-12, variant=SchemeVariant.upper(0.3)))
    po, _ = solve_mv(grid, g, MVConfig(eps=grid.h, tolerance=1e-12,
                                       variant=SchemeVariant.poisson(lambda x: -0.3)))
    np.testing.assert_allclose(up, po, atol=1e-14)


def test_workers_bit_identical(square16, cone_outside):
    g = boundary_trace(square16, cone_outside)
    a, _ = solve_mv(square16, g, MVConfig(eps=2 * square16.h))
    b, _ = solve_mv(square16, g, MVConfig(eps=2 * square16.h, workers=3))
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("kw,key", [
    ({"eps": 0.01}, "eps"),
    ({"eps": 0.1, "tolerance": 0.0}, "tolerance"),
    ({"eps": 0.1, "max_sweeps": 0}, "max_sweeps"),
    ({"eps": 0.1, "initialization": "zero"}, "initialization"),
])
def test_config_validation(square16, cone_outside, kw, key):
    g = boundary_trace(square16, cone_outside)
    with pytest.raises(ConfigError) as exc:
        solve_mv(square16, g, MVConfig(**kw))
    assert exc.value.key == key


def test_variant_validation():
    with pytest.raises(ConfigError):
        SchemeVariant.upper(0.0)
    with pytest.raises(ConfigError):
        SchemeVariant("poisson")
    with pytest.raises(ConfigError):
        SchemeVariant("weird")


def test_sandwich_rejects_nonpositive_delta(segment):
    grid, g = segment
    with pytest.raises(ConfigError):
        solve_sandwich(grid, g, grid.h, 0.0)


def test_boundary_data_must_match(square16, segment):
    _, g = segment
    with pytest.raises(PreconditionError):
        solve_mv(square16, g, MVConfig(eps=square16.h))


_prop_grid = build_grid(((0, 0), (1, 1)), 1 / 8)
_fields = st.integers(0, 2**32 - 1).map(lambda s: np.random.default_rng(s).normal(size=(2, _prop_grid.n_nodes)))


@settings(max_examples=50)
@given(pair=_fields, k=st.sampled_from([1.0, 1.5, 2.0, 3.0]))
def test_sweep_monotone_and_nonexpansive(pair, k):
    a, b = pair
    cfg = MVConfig(eps=k * _prop_grid.h)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    assert np.all(mv_sweep(lo, _prop_grid, cfg) <= mv_sweep(hi, _prop_grid, cfg))
    gap = np.max(np.abs(mv_sweep(a, _prop_grid, cfg) - mv_sweep(b, _prop_grid, cfg)))
    assert gap <= np.max(np.abs(a - b)) * (1 + 1e-15)


@settings(max_examples=20)
@given(pair=_fields, k=st.sampled_from([1.0, 2.0]))
def test_solution_obeys_maximum_principle(pair, k):
    values = pair[0][: _prop_grid.boundary_idx.size]
    g = BoundaryData.from_values(_prop_grid, values)
    u, rep = solve_mv(_prop_grid, g, MVConfig(eps=k * _prop_grid.h))
    assert rep.converged
    assert values.min() - 1e-12 <= u.min() and u.max() <= values.max() + 1e-12
