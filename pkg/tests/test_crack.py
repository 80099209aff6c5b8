import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xfemdur.crack import (
    SPLIT,
    TIP,
    CrackPolyline,
    CrackStateError,
    OutOfDomainError,
    TipFrame,
    classify_elements,
    nudge_off_edges,
    signed_side,
    tip_polar,
    triangle_area,
    triangulate_cut,
)
from xfemdur.mesh import Rectangle, build_mesh


@pytest.fixture
def mesh():
    return build_mesh(Rectangle(0, 0, 10, 10), 10, 10)


def horizontal():
    return CrackPolyline.edge([[-1.0, 0.0], [1.0, 0.0]])


def test_signed_side_above_and_below():
    c = horizontal()
    assert signed_side([0.5, 0.3], c)[0] == 1.0
    assert signed_side([0.5, -0.3], c)[0] == -1.0


def test_signed_side_tie_break_on_crack():
    assert signed_side([0.25, 0.0], horizontal())[0] == 1.0


def test_signed_side_kinked_crack_uses_bisector():
    c = CrackPolyline.edge([[0, 0], [1, 0], [2, 1]])
    # just outside the kink, on the convex side
    assert signed_side([1.05, -0.2], c)[0] == -1.0
    assert signed_side([0.9, 0.2], c)[0] == 1.0


def test_degenerate_polyline_rejected():
    with pytest.raises(CrackStateError):
        CrackPolyline.edge([[0, 0], [0, 0]])
    with pytest.raises(CrackStateError):
        CrackPolyline.edge([[0, 0]])


def test_edge_and_center_tip_counts():
    assert horizontal().active_tips() == [1]
    assert CrackPolyline.center([[0, 0], [1, 0]]).active_tips() == [0, 1]


def test_tip_polar_examples():
    f = TipFrame(np.array([2.0, 3.0]), np.array([1.0, 0.0]))
    assert tip_polar([2.0, 3.0], f) == (0.0, 0.0)
    r, th = tip_polar([3.0, 3.0], f)
    assert r == pytest.approx(1.0) and th == pytest.approx(0.0)
    r, th = tip_polar([1.0, 3.0 + 1e-12], f)
    assert r == pytest.approx(1.0) and th == pytest.approx(np.pi)
    # the lower crack face maps to +pi as well, theta lies in (-pi, pi]
    _, th = tip_polar([1.0, 3.0], f)
    assert th == pytest.approx(np.pi)


def test_tip_frame_tangent_unit():
    c = CrackPolyline.edge([[0, 0], [3, 4]])
    assert np.linalg.norm(c.tip_frame(1).tangent) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(c.tip_frame(1).tangent, [0.6, 0.8])


def test_three_split_one_tip(mesh):
    c = CrackPolyline.edge([[0.0, 5.5], [3.5, 5.5]])
    cl = classify_elements(mesh, c)
    kinds = sorted((e, k.kind) for e, k in cl.items())
    assert [k for _, k in kinds] == [SPLIT, SPLIT, SPLIT, TIP]
    assert cl[mesh.locate((3.5, 5.5))].kind == TIP


def test_previous_tip_element_becomes_split(mesh):
    c = CrackPolyline.edge([[0.0, 5.5], [3.5, 5.5]])
    old_tip = mesh.locate((3.5, 5.5))
    c.grow(1, [4.5, 5.5])
    cl = classify_elements(mesh, c)
    assert cl[old_tip].kind == SPLIT
    assert cl[mesh.locate((4.5, 5.5))].kind == TIP


def test_crack_outside_mesh(mesh):
    far = CrackPolyline.edge([[20.0, 20.0], [25.0, 20.0]])
    with pytest.raises(OutOfDomainError):
        classify_elements(mesh, far)
    inert = CrackPolyline([[20.0, 20.0], [25.0, 20.0]], active=[False, False])
    assert classify_elements(mesh, inert) == {}


def test_grow_only_at_active_tip():
    c = horizontal()
    with pytest.raises(CrackStateError):
        c.grow(0, [-2.0, 0.0])
    sid = c.grow(1, [2.0, 0.5], step=1)
    assert c.segment_ids == [0, sid]
    assert c.history == [(1, 1, sid)]


def test_growth_at_tip_zero_keeps_segment_ids():
    c = CrackPolyline.center([[0, 0], [1, 0]])
    a = c.grow(1, [2, 0])
    b = c.grow(0, [-1, 0])
    assert c.segment_ids == [b, 0, a]


def test_nudge_moves_point_off_mesh_line(mesh):
    p = nudge_off_edges([3.0, 5.5], [1.0, 0.0], mesh, 1.0)
    assert p[0] > 3.0 and p[0] - 3.0 < 1e-3
    q = nudge_off_edges([3.3, 5.5], [1.0, 0.0], mesh, 1.0)
    np.testing.assert_array_equal(q, [3.3, 5.5])


def test_midline_cut_gives_four_triangles():
    box = (0.0, 0.0, 1.0, 1.0)
    tris = triangulate_cut(box, (((0.0, 0.5), (1.0, 0.5)),))
    assert len(tris) == 4
    assert sum(triangle_area(t) for t in tris) == pytest.approx(1.0, rel=1e-12)
    c = CrackPolyline.edge([[-1.0, 0.5], [2.0, 0.5]])
    sides = signed_side(np.array([np.mean(t, axis=0) for t in tris]), c)
    assert sorted(sides) == [-1, -1, 1, 1]


def test_tip_at_centroid_fans_from_tip():
    box = (0.0, 0.0, 1.0, 1.0)
    tip = np.array([0.5, 0.5])
    tris = triangulate_cut(box, (((0.0, 0.5), (0.5, 0.5)),), tip=tip)
    # four corners plus the crack entry point on the ring
    assert len(tris) == 5
    assert all(any(np.allclose(v, tip) for v in t) for t in tris)
    assert sum(triangle_area(t) for t in tris) == pytest.approx(1.0, rel=1e-12)
    # the crack face is an edge of exactly two triangles
    entry = np.array([0.0, 0.5])
    assert sum(any(np.allclose(v, entry) for v in t) for t in tris) == 2


straight_cut = st.tuples(st.floats(0.02, 0.98), st.floats(0.02, 0.98))


@settings(max_examples=60, deadline=None)
@given(straight_cut)
def test_cut_triangulation_conserves_area_and_sides(ys):
    box = (0.0, 0.0, 1.0, 1.0)
    a, b = (0.0, ys[0]), (1.0, ys[1])
    tris = triangulate_cut(box, ((a, b),))
    assert sum(triangle_area(t) for t in tris) == pytest.approx(1.0, rel=1e-10)
    c = CrackPolyline.edge([[-1.0, 2 * ys[0] - ys[1]], [2.0, 2 * ys[1] - ys[0]]])
    cent = np.array([np.mean(t, axis=0) for t in tris])
    sides = signed_side(cent, c)
    assert {-1.0, 1.0} == set(sides)
    # every sub-triangle lies entirely on one side
    for t, s in zip(tris, sides):
        inner = np.mean(t, axis=0) * 0.9 + 0.1 * np.asarray(t)
        assert np.all(signed_side(inner, c) == s)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1.0, 1.0), min_size=1, max_size=6))
def test_growth_monotonicity(turns):
    mesh = build_mesh(Rectangle(0, 0, 20, 20), 20, 20)
    c = CrackPolyline.edge([[0.0, 10.3], [2.7, 10.3]])
    before = {e for e, k in classify_elements(mesh, c).items() if k.kind == SPLIT}
    for t in turns:
        f = c.tip_frame(1)
        d = np.array([np.cos(t) * f.tangent[0] - np.sin(t) * f.tangent[1], np.sin(t) * f.tangent[0] + np.cos(t) * f.tangent[1]])
        p = nudge_off_edges(f.origin + 0.9 * d, d, mesh, 0.9)
        if not mesh.domain.contains(p):
            break
        c.grow(1, p)
        after = {e for e, k in classify_elements(mesh, c).items() if k.kind == SPLIT}
        assert before <= after
        before = after


@settings(max_examples=20, deadline=None)
@given(st.integers(-5, 5), st.integers(-5, 5))
def test_classification_translation_invariant(i, j):
    shift = np.array([4.0 * i, 2.0 * j])
    m0 = build_mesh(Rectangle(0, 0, 10, 10), 10, 10)
    m1 = build_mesh(Rectangle(shift[0], shift[1], 10 + shift[0], 10 + shift[1]), 10, 10)
    c = CrackPolyline.edge([[0.0, 4.3], [3.1, 5.2], [5.6, 5.45]])
    k0 = {e: k.kind for e, k in classify_elements(m0, c).items()}
    k1 = {e: k.kind for e, k in classify_elements(m1, c.translated(shift)).items()}
    assert k0 == k1
