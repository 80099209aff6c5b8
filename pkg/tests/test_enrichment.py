import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xfemdur.crack import CrackPolyline, TipFrame, classify_elements, nudge_off_edges
from xfemdur.enrichment import (
    DofMap,
    branch_functions,
    branch_global,
    heaviside_shifted,
    update_dof_map,
)
from xfemdur.mesh import Rectangle, build_mesh, shape_functions


def setup(tip_x=3.5, y=5.5):
    mesh = build_mesh(Rectangle(0, 0, 10, 10), 10, 10)
    crack = CrackPolyline.edge([[0.0, y], [tip_x, y]])
    dm = DofMap(mesh.n_nodes)
    dm, _ = update_dof_map(dm, classify_elements(mesh, crack), crack, mesh)
    return mesh, crack, dm


def test_heaviside_shifted_values():
    c = CrackPolyline.edge([[-5.0, 0.0], [5.0, 0.0]])
    assert heaviside_shifted([0.5, 0.3], [1.0, 0.2], c) == 0.0
    assert heaviside_shifted([0.5, 0.3], [1.0, -0.2], c) == 2.0
    assert heaviside_shifted([0.5, -0.3], [1.0, 0.2], c) == -2.0
    assert heaviside_shifted([1.0, -0.2], [1.0, -0.2], c) == 0.0


@pytest.mark.parametrize(
    "r,th,expected",
    [
        (1.0, 0.0, [0, 1, 0, 0]),
        (4.0, 0.0, [0, 2, 0, 0]),
        (1.0, np.pi / 2, [0.70711, 0.70711, 0.70711, 0.70711]),
    ],
)
def test_branch_values(r, th, expected):
    phi, _ = branch_functions(r, th)
    np.testing.assert_allclose(phi, expected, atol=5e-6)


def test_branch_face_discontinuity():
    eps = 1e-9
    up, _ = branch_functions(1.0, np.pi - eps)
    lo, _ = branch_functions(1.0, -np.pi + eps)
    assert up[0] == pytest.approx(1.0) and lo[0] == pytest.approx(-1.0)
    np.testing.assert_allclose(up[1:], lo[1:], atol=1e-8)


def test_branch_gradient_singular_at_tip():
    _, g = branch_functions(0.0, 0.0)
    assert np.all(np.isinf(g))


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 3.0), st.floats(-3.0, 3.0), st.floats(-np.pi, np.pi))
def test_branch_gradient_matches_finite_difference(r, th, alpha):
    frame = TipFrame(np.array([0.3, -0.2]), np.array([np.cos(alpha), np.sin(alpha)]))
    t, n = frame.tangent, frame.normal
    p = frame.origin + r * (np.cos(th) * t + np.sin(th) * n)
    _, g = branch_global(p[None, :], frame)
    h = 1e-6 * r
    for k, e in enumerate(np.eye(2)):
        fp, _ = branch_global((p + h * e)[None, :], frame)
        fm, _ = branch_global((p - h * e)[None, :], frame)
        np.testing.assert_allclose(g[0, :, k], (fp - fm)[0] / (2 * h), rtol=1e-5, atol=1e-6)


def _field(mesh, crack, dm, e, x, coeffs):
    """Displacement at global point x inside element e from a coefficient vector."""
    x0, y0, x1, y1 = mesh.element_bounds(e)
    xi = (2 * (x[0] - x0) / (x1 - x0) - 1, 2 * (x[1] - y0) / (y1 - y0) - 1)
    N, _ = shape_functions(xi)
    u = np.zeros(2)
    for a, n in enumerate(mesh.elements[e]):
        u += N[a] * coeffs[dm.standard_dofs(int(n))]
        s = dm.node_state.get(int(n))
        if s is None:
            continue
        if s.kind == "H":
            u += N[a] * heaviside_shifted(x, mesh.nodes[n], crack) * coeffs[s.dofs]
        else:
            phi, _ = branch_global(np.asarray(x)[None, :], s.frame)
            psi = phi[0] - s.values
            u += N[a] * (coeffs[s.dofs].reshape(4, 2) * psi[:, None]).sum(axis=0)
    return u


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_kronecker_property(seed):
    mesh, crack, dm = setup()
    coeffs = np.random.default_rng(seed).normal(size=dm.size)
    for e in dm.classes:
        for n in mesh.elements[e]:
            u = _field(mesh, crack, dm, e, mesh.nodes[n], coeffs)
            np.testing.assert_allclose(u, coeffs[dm.standard_dofs(int(n))], atol=1e-12)


def test_node_holds_one_enrichment_and_tip_has_eight():
    mesh, crack, dm = setup()
    kinds = {n: s.kind for n, s in dm.node_state.items()}
    assert sum(k == "T" for k in kinds.values()) == 4
    for s in dm.node_state.values():
        assert len(s.dofs) == (8 if s.kind == "T" else 2)
    assert dm.standard_dofs(7).tolist() == [14, 15]


def test_no_class_change_is_fixed_point():
    mesh, crack, dm = setup()
    size = dm.size
    dm, changed = update_dof_map(dm, classify_elements(mesh, crack), crack, mesh)
    assert changed == set()
    assert dm.size == size


def test_tip_advance_counts():
    mesh, crack, dm = setup()
    before = dict(dm.node_state)
    crack.grow(1, [4.5, 5.5])
    n0 = dm.size
    dm, changed = update_dof_map(dm, classify_elements(mesh, crack), crack, mesh)
    old_tip = [s.dofs for s in before.values() if s.kind == "T"]
    assert set(np.concatenate(old_tip).tolist()) == dm.retired
    new = {n: s for n, s in dm.node_state.items() if s.dofs[0] >= n0}
    assert sum(len(s.dofs) for s in new.values() if s.kind == "T") == 32
    assert 0 < sum(len(s.dofs) for s in new.values() if s.kind == "H") <= 8
    assert set(range(n0, dm.size)) <= changed
    assert len(dm.retired) == 32


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-0.8, 0.8), min_size=1, max_size=6))
def test_dof_index_stability(turns):
    mesh = build_mesh(Rectangle(0, 0, 20, 20), 20, 20)
    crack = CrackPolyline.edge([[0.0, 10.3], [2.7, 10.3]])
    dm = DofMap(mesh.n_nodes)
    dm, _ = update_dof_map(dm, classify_elements(mesh, crack), crack, mesh)
    for t in turns:
        f = crack.tip_frame(1)
        c, s = np.cos(t), np.sin(t)
        d = np.array([c * f.tangent[0] - s * f.tangent[1], s * f.tangent[0] + c * f.tangent[1]])
        p = nudge_off_edges(f.origin + 1.3 * d, d, mesh, 1.3)
        if not mesh.domain.contains(p):
            break
        crack.grow(1, p)
        entries = {k: v.copy() for k, v in dm.entries.items()}
        retired = set(dm.retired)
        top = dm.size
        dm, _ = update_dof_map(dm, classify_elements(mesh, crack), crack, mesh)
        for k, v in entries.items():
            np.testing.assert_array_equal(dm.entries[k], v)
        for k in set(dm.entries) - set(entries):
            assert dm.entries[k].min() >= top
        assert retired <= dm.retired
        active = set(dm.active_enriched().tolist())
        assert not active & dm.retired
        assert min(active) >= dm.n_standard
        assert len(active) + len(dm.retired) == dm.size - dm.n_standard
