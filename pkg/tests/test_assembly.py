import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from xfemdur.assembly import (
    AssemblyError,
    Assembler,
    BoundaryConditions,
    EdgeTraction,
    Material,
    MaterialField,
    NodalLoad,
    SingularSystemError,
    assemble_full,
    check_definite,
    edge_nodes,
    element_kernel,
    element_stiffness,
    integrate_cut_element,
    load_vector,
)
from xfemdur.crack import SPLIT, TIP, CrackPolyline, classify_elements, nudge_off_edges, signed_side, tip_polar_batch
from xfemdur.enrichment import DofMap, update_dof_map
from xfemdur.mesh import Rectangle, build_mesh


def enriched(mesh, crack):
    dm = DofMap(mesh.n_nodes)
    dm, _ = update_dof_map(dm, classify_elements(mesh, crack), crack, mesh)
    return dm


def bottom_fixed(mesh, pin=0):
    fixed = {int(2 * n + 1): 0.0 for n in edge_nodes(mesh, "bottom")}
    fixed[2 * pin] = 0.0
    return fixed


@pytest.fixture
def cracked():
    mesh = build_mesh(Rectangle(0, 0, 10, 10), 10, 10)
    crack = CrackPolyline.edge([[0.0, 5.3], [4.6, 5.3]])
    return mesh, crack, enriched(mesh, crack), MaterialField(Material(1.0, 0.3))


def textbook_q4(nu):
    # closed-form plane-stress square Q4, thickness 1
    k = [0.5 - nu / 6, 0.125 + nu / 8, -0.25 - nu / 12, -0.125 + 3 * nu / 8,
         -0.25 + nu / 12, -0.125 - nu / 8, nu / 6, 0.125 - 3 * nu / 8]
    idx = [
        [0, 1, 2, 3, 4, 5, 6, 7],
        [1, 0, 7, 6, 5, 4, 3, 2],
        [2, 7, 0, 5, 6, 3, 4, 1],
        [3, 6, 5, 0, 7, 2, 1, 4],
        [4, 5, 6, 7, 0, 1, 2, 3],
        [5, 4, 3, 2, 1, 0, 7, 6],
        [6, 3, 4, 1, 2, 7, 0, 5],
        [7, 2, 1, 4, 3, 6, 5, 0],
    ]
    return np.array([[k[j] for j in row] for row in idx]) / (1 - nu ** 2)


def test_standard_element_matches_textbook():
    mesh = build_mesh(Rectangle(0, 0, 1, 1), 1, 1)
    Ke, dofs = element_stiffness(mesh, 0, None, None, MaterialField(Material(1.0, 0.0)), DofMap(mesh.n_nodes))
    np.testing.assert_allclose(Ke, textbook_q4(0.0), atol=1e-14)
    np.testing.assert_array_equal(dofs, [0, 1, 2, 3, 6, 7, 4, 5])


def test_plane_strain_matches_plane_stress_with_effective_constants():
    nu = 0.3
    mesh = build_mesh(Rectangle(0, 0, 1, 1), 1, 1)
    Ke, _ = element_stiffness(mesh, 0, None, None, MaterialField(Material(1.0, nu)), DofMap(mesh.n_nodes))
    E_eff, nu_eff = 1.0 / (1 - nu ** 2), nu / (1 - nu)
    np.testing.assert_allclose(Ke, E_eff * textbook_q4(nu_eff), atol=1e-13)


def test_material_validation():
    for E, nu in [(0.0, 0.3), (1.0, 0.5), (1.0, -0.1)]:
        with pytest.raises(ValueError):
            Material(E, nu)


def test_split_element_translation_in_null_space(cracked):
    mesh, crack, dm, mat = cracked
    for e, c in dm.classes.items():
        if c.kind != SPLIT:
            continue
        Ke, dofs = element_stiffness(mesh, e, c, crack, mat, dm)
        assert np.abs(Ke - Ke.T).max() <= 1e-12 * np.abs(Ke).max()
        for comp in range(2):
            t = np.zeros(dofs.size)
            t[comp:8:2] = 1.0
            assert np.abs(Ke @ t).max() < 1e-10


def identity_modes(mesh, e, crack, dm, dofs):
    """Branch-DOF vectors whose field vanishes identically.

    In tip coordinates the branch basis satisfies
    x1*F3 - x2*F4 + x2*F1 = 0 and x1*F4 - x2*F2 + x2*F3 = 0, and bilinear
    shape functions reproduce x1 and x2 exactly.
    """
    frame = crack.tip_frame(1)
    pos = {int(d): i for i, d in enumerate(dofs)}
    out = []
    for coeffs in ({2: 1, 3: -1, 0: 1}, {3: 1, 1: -1, 2: 1}):
        for comp in range(2):
            v = np.zeros(dofs.size)
            for n in mesh.elements[e]:
                st = dm.node_state[int(n)]
                rel = mesh.nodes[n] - frame.origin
                x1, x2 = rel @ frame.tangent, rel @ frame.normal
                lin = {2: x1, 3: x2, 0: x2} if 0 in coeffs else {3: x1, 1: x2, 2: x2}
                for k, sgn in coeffs.items():
                    v[pos[int(st.dofs[2 * k + comp])]] += sgn * lin[k]
            out.append(v)
    return np.array(out).T


def test_tip_element_null_space(cracked):
    mesh, crack, dm, mat = cracked
    (e, c), = [(e, c) for e, c in dm.classes.items() if c.kind == TIP]
    Ke, dofs = element_stiffness(mesh, e, c, crack, mat, dm)
    w, V = np.linalg.eigh(Ke)
    tol = 1e-10 * w.max()
    assert w.min() > -tol
    rigid = np.zeros((dofs.size, 3))
    xy = mesh.nodes[mesh.elements[e]]
    rigid[0:8:2, 0] = 1.0
    rigid[1:8:2, 1] = 1.0
    rigid[0:8:2, 2] = -xy[:, 1]
    rigid[1:8:2, 2] = xy[:, 0]
    ident = identity_modes(mesh, e, crack, dm, dofs)
    basis = np.hstack([rigid, ident])
    assert np.abs(Ke @ basis).max() < 1e-10 * np.abs(Ke).max()
    assert np.linalg.matrix_rank(basis) == 7
    # nothing else: 3 rigid modes plus the 4 identity modes
    assert int(np.sum(w < tol)) == 7


def test_cut_quadrature_area_and_placement(cracked):
    mesh, crack, dm, _ = cracked
    for e, c in dm.classes.items():
        plan = integrate_cut_element(mesh, e, c, crack)
        x0, y0, x1, y1 = mesh.element_bounds(e)
        assert plan.weights.sum() == pytest.approx((x1 - x0) * (y1 - y0), rel=1e-10)
        # no point on the crack line or at the tip
        assert np.all(np.abs(plan.points[:, 1] - 5.3) > 1e-6)
        r, _ = tip_polar_batch(plan.points, crack.tip_frame(1))
        assert r.min() > 1e-6
        if c.kind == SPLIT:
            # ahead of a tip the side is undefined, and tip nodes carry no Heaviside DOFs
            np.testing.assert_array_equal(plan.side, signed_side(plan.points, crack))
        npts = plan.weights.size
        assert npts % (7 if c.kind == TIP else 3) == 0


def test_uncut_element_rejected(cracked):
    mesh, crack, dm, _ = cracked
    with pytest.raises(AssemblyError):
        integrate_cut_element(mesh, 0, None, crack)


def test_patch_test_uniform_tension():
    mesh = build_mesh(Rectangle(0, 0, 4, 6), 4, 6)
    E, nu, s = 200.0, 0.3, 2.0
    mat = MaterialField(Material(E, nu))
    bcs = BoundaryConditions(fixed=bottom_fixed(mesh), tractions=[EdgeTraction("top", (0.0, s))])
    dm = DofMap(mesh.n_nodes)
    blk, F = assemble_full(mesh, CrackPolyline.edge([[50, 50], [51, 50]]), dm, mat, bcs)
    U = np.zeros(dm.size)
    U[blk.dofs] = spla.spsolve(blk.K, F)
    eyy = (1 - nu ** 2) * s / E
    exx = -nu * (1 + nu) * s / E
    exact = np.column_stack([exx * mesh.nodes[:, 0], eyy * mesh.nodes[:, 1]]).ravel()
    np.testing.assert_allclose(U, exact, rtol=0, atol=1e-10 * np.abs(exact).max())
    D = Material(E, nu).D()
    for e in range(mesh.n_elements):
        ker = element_kernel(mesh, e, None, None, dm, mat)
        sig = (ker.B @ U[ker.dofs]) @ D.T
        np.testing.assert_allclose(sig, np.tile([0.0, s, 0.0], (sig.shape[0], 1)), atol=1e-10 * s)


def test_cracked_plate_opens_under_tension():
    mesh = build_mesh(Rectangle(0, 0, 10, 20), 10, 20)
    crack = CrackPolyline.edge([[0.0, 10.5], [4.3, 10.5]])
    dm = enriched(mesh, crack)
    mat = MaterialField(Material(100.0, 0.3))
    bcs = BoundaryConditions(fixed=bottom_fixed(mesh), tractions=[EdgeTraction("top", (0.0, 1.0))])
    blk, F = assemble_full(mesh, crack, dm, mat, bcs)
    U = np.zeros(dm.size)
    U[blk.dofs] = spla.spsolve(blk.K, F)
    # jump of u_y across the faces at a node is 2 * a_y
    opening = [2 * U[st.dofs[1]] for n, st in dm.node_state.items() if st.kind == "H" and mesh.nodes[n][0] < 1.0]
    assert opening and min(opening) > 1e-3


def test_symmetric_and_definite(cracked):
    mesh, crack, dm, mat = cracked
    bcs = BoundaryConditions(fixed=bottom_fixed(mesh), tractions=[EdgeTraction("top", (0.0, 1.0))])
    blk, _ = assemble_full(mesh, crack, dm, mat, bcs)
    K = blk.K
    assert abs(K - K.T).max() <= 1e-10 * abs(K).max()
    check_definite(K)
    assert (blk.kind == 2).sum() == 32
    assert blk.block("u", "u").shape[0] == blk.n_standard


def test_unsupported_plate_reports_rigid_mode():
    mesh = build_mesh(Rectangle(0, 0, 3, 3), 3, 3)
    mat = MaterialField(Material(1.0, 0.25))
    fixed = {int(2 * n + 1): 0.0 for n in edge_nodes(mesh, "bottom")}
    with pytest.raises(SingularSystemError) as err:
        assemble_full(mesh, CrackPolyline.edge([[50, 50], [51, 50]]), DofMap(mesh.n_nodes), mat,
                      BoundaryConditions(fixed=fixed))
    v = err.value.null_vector
    assert np.allclose(v[0::2], v[0]) and np.allclose(v[1::2], 0.0)


def test_check_definite_on_singular_matrix():
    K = sp.csc_matrix(np.array([[1.0, -1.0], [-1.0, 1.0]]))
    with pytest.raises(SingularSystemError) as err:
        check_definite(K)
    v = err.value.null_vector
    if v is not None:
        assert abs(abs(v[0]) - abs(v[1])) < 1e-8


def test_load_vector_totals():
    mesh = build_mesh(Rectangle(0, 0, 4, 6), 4, 6)
    bcs = BoundaryConditions(nodal=[NodalLoad(3, (0.0, 5.0))], tractions=[EdgeTraction("top", (1.0, 2.0))])
    F = load_vector(mesh, None, DofMap(mesh.n_nodes), MaterialField(Material(1.0, 0.3)), bcs)
    assert F[0::2].sum() == pytest.approx(4.0)
    assert F[1::2].sum() == pytest.approx(8.0 + 5.0)
    top = edge_nodes(mesh, "top")
    assert F[2 * top[0] + 1] == pytest.approx(1.0) and F[2 * top[1] + 1] == pytest.approx(2.0)


def _grow_sequence(mesh, crack, steps, da=0.9):
    for k in range(steps):
        f = crack.tip_frame(1)
        ang = 0.15 * np.sin(k)
        d = np.array([np.cos(ang) * f.tangent[0] - np.sin(ang) * f.tangent[1],
                      np.sin(ang) * f.tangent[0] + np.cos(ang) * f.tangent[1]])
        crack.grow(1, nudge_off_edges(f.origin + da * d, d, mesh, da))
        yield crack


def test_delta_matches_full_and_kuu_is_fixed():
    mesh = build_mesh(Rectangle(0, 0, 12, 12), 12, 12)
    mat = MaterialField(Material(70.0, 0.3), hole=None)
    bcs = BoundaryConditions(fixed=bottom_fixed(mesh), tractions=[EdgeTraction("top", (0.0, 1.0))])
    asm = Assembler(mesh, mat, bcs)
    crack = CrackPolyline.edge([[0.0, 6.3], [2.6, 6.3]])
    dm = enriched(mesh, crack)
    Kuu = asm.standard_block()
    prev, _, _ = asm.assemble_delta(None, crack, dm)
    for crack in _grow_sequence(mesh, crack, 8):
        dm, _ = update_dof_map(dm, classify_elements(mesh, crack), crack, mesh)
        blk, F, changed = asm.assemble_delta(prev, crack, dm)
        ref, Fr = asm.assemble_full(crack, dm)
        assert blk.K.shape == ref.K.shape
        assert abs(blk.K - ref.K).max() <= 1e-12 * abs(ref.K).max()
        np.testing.assert_allclose(F, Fr, rtol=0, atol=1e-12 * np.abs(Fr).max())
        assert asm.standard_block() is Kuu
        uu = blk.block("u", "u")
        assert (uu != Kuu).nnz == 0
        # rows outside the changed set are unchanged from the previous step
        n = prev.size
        diff = (blk.K[:n, :n] - prev.K).tocoo()
        rows = set(diff.row[diff.data != 0].tolist())
        assert rows <= changed
        assert set(range(n, blk.size)) <= changed
        prev = blk


def test_delta_without_growth_changes_nothing():
    mesh = build_mesh(Rectangle(0, 0, 8, 8), 8, 8)
    mat = MaterialField(Material(1.0, 0.3))
    asm = Assembler(mesh, mat, BoundaryConditions(fixed=bottom_fixed(mesh)))
    crack = CrackPolyline.edge([[0.0, 4.3], [2.6, 4.3]])
    dm = enriched(mesh, crack)
    prev, _, _ = asm.assemble_delta(None, crack, dm)
    blk, _, changed = asm.assemble_delta(prev, crack, dm)
    assert changed == set()
    assert asm.recomputed_elements() == 0
    assert (blk.K != prev.K).nnz == 0
    with pytest.raises(AssemblyError):
        asm.assemble_delta(prev, crack, dm, changed_elements=[0])
