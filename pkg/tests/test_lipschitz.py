import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from infharm import PreconditionError
from infharm.errors import GridError
from infharm.grid import BoundaryData, boundary_trace, build_grid
from infharm.lipschitz import (
    check_amle,
    check_cone_comparison,
    check_harnack,
    check_maximum_principle,
    cone_suite,
    lipschitz_constant,
    mcshane_whitney,
    nodes_in_ball,
    random_subdomains,
    sphere_profile,
    stencil_envelope,
)
from infharm.mv_solver import MVConfig, solve_mv


@pytest.fixture
def cone_data(square16, cone_outside):
    cone = cone_outside(square16.coords)
    return boundary_trace(square16, cone_outside), cone


def test_mw_1d_linear(segment):
    grid, g = segment
    x = grid.coords[:, 0]
    np.testing.assert_allclose(mcshane_whitney(grid, g, "upper"), x, atol=1e-15)
    np.testing.assert_allclose(mcshane_whitney(grid, g, "lower"), x, atol=1e-15)


def test_mw_constant(square16):
    g = BoundaryData.from_values(square16, np.full(square16.boundary_idx.size, 3.5))
    for side in ("upper", "lower"):
        assert np.all(mcshane_whitney(square16, g, side) == 3.5)


def test_mw_brackets_cone(square16, cone_data):
    g, cone = cone_data
    up, lo = mcshane_whitney(square16, g, "upper"), mcshane_whitney(square16, g, "lower")
    assert np.all(lo <= cone + 1e-12) and np.all(cone <= up + 1e-12)
    for v in (up, lo):
        assert lipschitz_constant(v, square16) <= g.lipschitz + 1e-9
        np.testing.assert_array_equal(v[square16.boundary_idx], g.values)


def test_mw_brackets_mv_solution(square16, cone_data):
    g, cone = cone_data
    for k in (1, 2):
        u, _ = solve_mv(square16, g, MVConfig(eps=k * square16.h))
        # clipped balls put an O(eps) error one node from the boundary, so the
        # slack is calibrated on this grid rather than claimed as a rate
        assert lipschitz_constant(u, square16) <= g.lipschitz + 5 * square16.h
        err = np.max(np.abs(u - cone))
        assert np.all(mcshane_whitney(square16, g, "lower") <= u + err)
        assert np.all(u <= mcshane_whitney(square16, g, "upper") + err)


def test_stencil_envelope_dominates(square16, cone_data):
    g, _ = cone_data
    eps = 3 * square16.h
    assert np.all(stencil_envelope(square16, g, eps, "upper") >= mcshane_whitney(square16, g, "upper") - 1e-12)
    assert np.all(stencil_envelope(square16, g, eps, "lower") <= mcshane_whitney(square16, g, "lower") + 1e-12)


def test_lipschitz_examples(segment, square32):
    grid, _ = segment
    assert lipschitz_constant(grid.coords[:, 0], grid) == pytest.approx(1.0)
    assert lipschitz_constant(np.ones(grid.n_nodes), grid) == 0.0
    cone = 2 * np.linalg.norm(square32.coords - np.array([-0.5, -0.5]), axis=1)
    assert abs(lipschitz_constant(cone, square32) - 2.0) <= 0.05
    with pytest.warns(UserWarning):
        assert lipschitz_constant(cone, square32, [3]) == 0.0
    with pytest.raises(PreconditionError):
        lipschitz_constant(cone, square32, [])


def test_lipschitz_region_forms(square16):
    u = square16.coords[:, 0] + 3 * (square16.coords[:, 1] > 0.5) * square16.coords[:, 1]
    left = lambda x: x[1] < 0.4
    mask = square16.coords[:, 1] < 0.4
    a = lipschitz_constant(u, square16, left)
    assert a == pytest.approx(1.0)
    assert lipschitz_constant(u, square16, mask) == a
    assert lipschitz_constant(u, square16, np.flatnonzero(mask)) == a


def test_cone_equality_case(square32):
    apex = np.array([1.7, -0.4])
    u = 0.3 + 1.5 * np.linalg.norm(square32.coords - apex, axis=1)
    nodes = nodes_in_ball(square32, (0.5, 0.5), 0.3)
    for side in ("above", "below"):
        rep = check_cone_comparison(u, square32, nodes, apex, 1.5, side)
        assert rep.passed and abs(rep.details["worst_slack"]) < 1e-12


def test_cone_apex_inside_raises(square16):
    nodes = nodes_in_ball(square16, (0.5, 0.5), 0.3)
    with pytest.raises(PreconditionError, match="apex"):
        check_cone_comparison(np.zeros(square16.n_nodes), square16, nodes, (0.5, 0.5), 1.0)


def test_affine_random_cones(square16):
    u = 0.7 * square16.coords[:, 0] - 1.3 * square16.coords[:, 1] + 0.2
    rep = cone_suite(u, square16, n_cones=10, n_subdomains=10, seed=3, c=0.0)
    assert rep.passed and rep.details["checks"] == 200 and rep.details["failures"] == 0


def test_frozen_cone_counterexample():
    # -|x|^2/2 has an interior maximum at the origin; found by brute force over
    # b in {-1, 0, 1}: the b = 0 comparison from above fails on the disc below
    grid = build_grid(((-1, -1), (1, 1)), 1 / 16)
    u = -0.5 * np.sum(grid.coords**2, axis=1)
    nodes = nodes_in_ball(grid, (0, 0), 0.5)
    rep = check_cone_comparison(u, grid, nodes, (3.0, 3.0), 0.0, "above", c=1.0)
    assert not rep.passed
    # worst edge node of the disc sits at |x|^2 = 0.1953125
    assert rep.violation == pytest.approx(0.09765625, abs=1e-12)
    np.testing.assert_allclose(rep.locations[0], [0, 0], atol=1e-12)


def test_cone_b0_is_maximum_principle(square16, cone_data):
    g, _ = cone_data
    u, _ = solve_mv(square16, g, MVConfig(eps=2 * square16.h))
    assert check_maximum_principle(u, square16, g).passed
    rng = np.random.default_rng(0)
    for nodes in random_subdomains(square16, 5, rng):
        for side in ("above", "below"):
            assert check_cone_comparison(u, square16, nodes, (5, 5), 0.0, side).passed


def test_maximum_principle_detects_overshoot(square16, cone_data):
    g, cone = cone_data
    bad = cone.copy()
    bad[square16.interior_idx[0]] = g.values.max() + 1
    assert not check_maximum_principle(bad, square16, g).passed


def test_harnack_constant_and_affine():
    grid = build_grid(((-1.5, -1.5), (1.5, 1.5)), 1 / 20)
    rep = check_harnack(np.full(grid.n_nodes, 2.0), grid, (0, 0), 0.2, 1.0)
    assert rep.passed and rep.details["worst_ratio"] == 1.0
    assert check_harnack(np.full(grid.n_nodes, 2.0), grid, (0, 0), 0.2, 1.0, "exponential").passed
    u = grid.coords[:, 0] + 2
    rep = check_harnack(u, grid, (0, 0), 0.2, 1.0)
    assert rep.passed and rep.details["worst_ratio"] == pytest.approx(2.2 / 1.8, abs=1e-12)


def test_harnack_errors():
    grid = build_grid(((-1, -1), (1, 1)), 1 / 16)
    u = grid.coords[:, 0]
    with pytest.raises(PreconditionError, match="negative"):
        check_harnack(u, grid, (0, 0), 0.1, 0.5)
    with pytest.raises(PreconditionError, match="4r < R"):
        check_harnack(u + 5, grid, (0, 0), 0.2, 0.5)
    with pytest.raises(PreconditionError, match="contained"):
        check_harnack(u + 5, grid, (0.8, 0), 0.05, 0.5)


def test_harnack_on_solution():
    grid = build_grid(((0, 0), (1, 1)), 1 / 32)
    g = boundary_trace(grid, lambda x: np.hypot(x[0] + 0.5, x[1] + 0.5))
    u, _ = solve_mv(grid, g, MVConfig(eps=2 * grid.h))
    rep = check_harnack(u, grid, (0.5, 0.5), 0.09, 0.4)
    assert rep.passed and rep.details["worst_ratio"] < 3
    assert check_harnack(u, grid, (0.5, 0.5), 0.09, 0.4, "exponential").passed


def test_sphere_profiles():
    grid = build_grid(((-2, -2), (2, 2)), 1 / 16)
    radii = [0.5, 0.75, 1.0, 1.25, 1.5]
    # shells of half-width h/2 add up to 2 L h of noise to a second difference
    vals, rep = sphere_profile(np.linalg.norm(grid.coords, axis=1), grid, (0, 0), radii, c=2.0)
    assert rep.passed
    np.testing.assert_allclose(vals, radii, atol=grid.h / 2)
    vals, rep = sphere_profile(grid.coords[:, 0], grid, (0.25, 0), radii, c=2.0)
    assert rep.passed
    np.testing.assert_allclose(vals, 0.25 + np.asarray(radii), atol=grid.h / 2)
    vals, rep = sphere_profile(-4 * np.sum(grid.coords**2, axis=1), grid, (0, 0), radii, c=2.0)
    assert not rep.passed
    with pytest.raises(GridError, match="finer"):
        sphere_profile(grid.coords[:, 0], grid, (0, 0), [5.0])


def test_amle_affine_passes():
    grid = build_grid(((0, 0), (1, 1)), 1 / 16)
    u = 0.4 * grid.coords[:, 0] + 0.9 * grid.coords[:, 1]
    rep = check_amle(u, grid, nodes_in_ball(grid, (0.5, 0.5), 0.25), MVConfig(eps=grid.h), c=0.0)
    assert rep.passed


def test_amle_mv_solution_passes():
    grid = build_grid(((0, 0), (1, 1)), 1 / 16)
    g = boundary_trace(grid, lambda x: x[0] ** 2 - x[1])
    u, _ = solve_mv(grid, g, MVConfig(eps=grid.h))
    rep = check_amle(u, grid, nodes_in_ball(grid, (0.5, 0.5), 0.25), MVConfig(eps=grid.h),
                     n_competitors=20, seed=0)
    assert rep.passed


def test_amle_frozen_mw_counterexample():
    # found by brute force over centres in [0.3, 0.7]^2 and radii 0.15-0.25:
    # two tent bumps on the boundary, the upper envelope keeps a sharp ridge
    grid = build_grid(((0, 0), (1, 1)), 1 / 16)

    def twopt(x):
        return max(0, 1 - 4 * np.hypot(x[0] - 0.25, x[1])) + max(0, 1 - 4 * np.hypot(x[0] - 1, x[1] - 0.75))

    g = boundary_trace(grid, twopt)
    u = mcshane_whitney(grid, g, "upper")
    rep = check_amle(u, grid, nodes_in_ball(grid, (0.5, 0.5), 0.15), MVConfig(eps=grid.h))
    assert not rep.passed
    assert rep.violation > 10 * grid.h


def test_amle_boundary_subdomain_raises(square16):
    with pytest.raises(PreconditionError, match="boundary"):
        check_amle(np.zeros(square16.n_nodes), square16, nodes_in_ball(square16, (0, 0), 0.3),
                   MVConfig(eps=square16.h))


def test_report_fail_iff_violation_exceeds_tolerance(square16):
    u = np.sum(square16.coords**2, axis=1)
    rep = cone_suite(u, square16, n_cones=5, n_subdomains=3, seed=1, c=0.0)
    d = rep.to_dict()
    assert d["violation"] >= 0
    assert d["passed"] == (d["violation"] <= d["tolerance"])


@settings(max_examples=30)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 10**6))
def test_affine_fields_satisfy_comparison(a, b, seed):
    grid = build_grid(((0, 0), (1, 1)), 1 / 12)
    u = a * grid.coords[:, 0] + b * grid.coords[:, 1]
    rng = np.random.default_rng(seed)
    nodes = random_subdomains(grid, 1, rng)[0]
    apex = rng.uniform(2, 4, 2) * rng.choice([-1, 1], 2)
    slope = rng.uniform(-3, 3)
    for side in ("above", "below"):
        assert check_cone_comparison(u, grid, nodes, apex, slope, side).passed
