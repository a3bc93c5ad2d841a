import numpy as np
import pytest
from hypothesis import given, strategies as st

from infharm import GridError, NonFiniteError, PreconditionError
from infharm.grid import (BOUNDARY, INTERIOR, BoundaryData, ball_stencil, boundary_trace, build_grid,
                          read_mask, write_mask)


def test_segment_enumeration():
    g = build_grid(((0.0,), (1.0,)), 0.25)
    assert g.n_nodes == 5
    np.testing.assert_allclose(g.coords[g.boundary_idx].ravel(), [0.0, 1.0])
    np.testing.assert_allclose(g.coords[g.interior_idx].ravel(), [0.25, 0.5, 0.75])


def test_coarse_square():
    g = build_grid(((0, 0), (1, 1)), 0.5)
    assert g.n_nodes == 9
    assert g.boundary_idx.size == 8
    np.testing.assert_allclose(g.coords[g.interior_idx], [[0.5, 0.5]])


def test_annulus_interior_predicate():
    g = build_grid(((-2, -2), (2, 2)), 0.1, {"type": "annulus", "r1": 1, "r2": 2})
    r = np.linalg.norm(g.coords[g.interior_idx], axis=1)
    assert np.all((r > 1) & (r < 2))
    # boundary nodes hug the two circles
    rb = np.linalg.norm(g.coords[g.boundary_idx], axis=1)
    assert np.all((np.abs(rb - 1) < 0.15) | (np.abs(rb - 2) < 0.15))


def test_node_order_is_lexicographic(square16):
    c = square16.coords
    keys = [tuple(row) for row in c]
    assert keys == sorted(keys)


def test_l_shape_and_mask_roundtrip(tmp_path):
    g = build_grid(((0, 0), (1, 1)), 0.125, {"type": "l_shape"})
    x = g.coords[g.interior_idx]
    assert not np.any((x[:, 0] >= 0.5) & (x[:, 1] >= 0.5))
    interior = g.kind == INTERIOR
    path = tmp_path / "l.txt"
    write_mask(path, interior)
    lines = path.read_text().split()
    # line j is y-index j, character i is x-index i
    assert lines[1][1] == "1" and lines[7][7] == "0"
    m = build_grid(((0, 0), (1, 1)), 0.125, {"type": "mask", "path": str(path)})
    np.testing.assert_array_equal(m.kind, g.kind)
    np.testing.assert_array_equal(read_mask(path), interior)


@pytest.mark.parametrize("box,h,shape,msg", [
    (((0, 0), (1, 1)), 0.3, None, "multiple"),
    (((0, 0), (1, 1)), 1.0, None, "interior"),
    (((-2, -2), (2, 2)), 0.5, {"type": "annulus", "r1": 1.0, "r2": 1.2}, "interior"),
])
def test_construction_errors(box, h, shape, msg):
    with pytest.raises(GridError, match=msg):
        build_grid(box, h, shape)


def test_disconnected_mask_rejected():
    mask = np.zeros((7, 5), dtype=bool)
    mask[1, 1:4] = True
    mask[5, 1:4] = True
    with pytest.raises(GridError, match="components"):
        build_grid(((0, 0), (6, 4)), 1.0, {"type": "mask", "mask": mask})


def test_ball_stencil_sizes():
    g = build_grid(((0, 0), (8, 8)), 1.0)
    centre = g.node_at((4, 4))
    assert len(ball_stencil(g, centre, 1.5)) == 9
    assert len(ball_stencil(g, centre, 1.0)) == 5
    assert centre in ball_stencil(g, centre, 1.0)


def test_ball_stencil_clipping():
    g = build_grid(((-2, -2), (2, 2)), 0.25, {"type": "annulus", "r1": 1, "r2": 2})
    node = g.interior_idx[np.argmin(np.linalg.norm(g.coords[g.interior_idx] - [1.25, 0.0], axis=1))]
    st_nodes = ball_stencil(g, node, 0.5)
    kinds = g.classification()[st_nodes]
    assert set(kinds.tolist()) <= {BOUNDARY, INTERIOR}
    # brute force: active nodes within eps
    d = np.linalg.norm(g.coords - g.coords[node], axis=1)
    assert st_nodes == sorted(np.flatnonzero(d <= 0.5 + 1e-12).tolist())


def test_stencil_errors(square16):
    with pytest.raises(GridError, match="eps >= h"):
        ball_stencil(square16, int(square16.interior_idx[0]), square16.h / 2)
    with pytest.raises(PreconditionError):
        ball_stencil(square16, int(square16.boundary_idx[0]), square16.h)


def test_boundary_trace_lipschitz(cone_outside):
    g = build_grid(((0, 0), (1, 1)), 0.5)
    assert boundary_trace(g, lambda x: x[0]).lipschitz == pytest.approx(1.0)
    assert boundary_trace(g, lambda x: 3.0).lipschitz == 0.0
    sq = build_grid(((0, 0), (1, 1)), 1 / 16)
    two = boundary_trace(sq, lambda x: 2 * np.linalg.norm(np.asarray(x) - [-0.5, -0.5]))
    # boundary nodes on the diagonal are collinear with the apex
    assert two.lipschitz == pytest.approx(2.0, rel=1e-12)


def test_boundary_trace_nonfinite_names_node():
    g = build_grid(((0, 0), (1, 1)), 0.5)
    with pytest.raises(NonFiniteError, match=r"\[0\.0, 0\.0\]"):
        boundary_trace(g, lambda x: np.nan if np.allclose(x, 0) else 0.0)


def test_boundary_values_shape_checked(square16):
    with pytest.raises(PreconditionError):
        BoundaryData.from_values(square16, np.zeros(3))


def test_rebuild_is_identical():
    a = build_grid(((-2, -2), (2, 2)), 1 / 8, {"type": "annulus", "r1": 1, "r2": 2})
    b = build_grid(((-2, -2), (2, 2)), 1 / 8, {"type": "annulus", "r1": 1, "r2": 2})
    assert a.coords.tobytes() == b.coords.tobytes()
    assert a.neighbor_table(0.25).tobytes() == b.neighbor_table(0.25).tobytes()


def test_interior_nodes_have_active_axis_neighbours(square16):
    nb = square16.axis_neighbors()
    assert all(len(nb[i]) == 4 for i in square16.interior_idx)


@given(e1=st.floats(1.0, 3.0), e2=st.floats(1.0, 3.0), k=st.integers(0, 10**6))
def test_stencils_nested_and_symmetric(e1, e2, k):
    g = build_grid(((0, 0), (1, 1)), 1 / 8, {"type": "l_shape"})
    lo, hi = sorted((e1 * g.h, e2 * g.h))
    node = int(g.interior_idx[k % g.interior_idx.size])
    small, big = ball_stencil(g, node, lo), ball_stencil(g, node, hi)
    assert set(small) <= set(big)
    for y in small:
        if g.is_interior[y]:
            assert node in ball_stencil(g, int(y), lo)
