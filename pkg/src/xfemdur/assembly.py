"""Element integration and global assembly of the enriched stiffness system."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .crack import SPLIT, TIP, CrackPolyline, ElementClass, signed_side, triangle_area, triangulate_cut
from .enrichment import DofMap, branch_global
from .mesh import TRIANGLE_RULES, QuadMesh, gauss_rule, shape_functions_batch

log = logging.getLogger(__name__)

BLENDING_TIP_ORDER = 4  # Gauss points per axis for uncut elements with tip-enriched nodes


class AssemblyError(RuntimeError):
    pass


class SingularSystemError(AssemblyError):
    def __init__(self, message, null_vector=None):
        super().__init__(message)
        self.null_vector = null_vector


@dataclass(frozen=True)
class Material:
    E: float
    nu: float

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError(f"Young's modulus must be positive, got {self.E}")
        if not 0.0 <= self.nu < 0.5:
            raise ValueError(f"Poisson ratio must lie in [0, 0.5), got {self.nu}")

    def D(self) -> np.ndarray:
        """Plane-strain elasticity matrix (Voigt, engineering shear)."""
        E, nu = self.E, self.nu
        f = E / ((1 + nu) * (1 - 2 * nu))
        return f * np.array([[1 - nu, nu, 0.0], [nu, 1 - nu, 0.0], [0.0, 0.0, 0.5 * (1 - 2 * nu)]])


@dataclass(frozen=True)
class Circle:
    center: tuple
    radius: float

    def inside(self, pts) -> np.ndarray:
        P = np.atleast_2d(pts)
        return np.hypot(P[:, 0] - self.center[0], P[:, 1] - self.center[1]) < self.radius


@dataclass(frozen=True)
class MaterialField:
    """Plate material with an optional bonded circular inclusion and an optional hole.

    The inclusion is resolved per quadrature point.  The hole removes every
    element whose centroid lies inside it.
    """

    base: Material
    inclusion: Circle | None = None
    inclusion_E: float | None = None
    hole: Circle | None = None

    def E_at(self, pts) -> np.ndarray:
        P = np.atleast_2d(pts)
        E = np.full(P.shape[0], self.base.E)
        if self.inclusion is not None:
            E[self.inclusion.inside(P)] = self.inclusion_E
        return E

    @property
    def nu(self) -> float:
        return self.base.nu

    def void_elements(self, mesh: QuadMesh) -> np.ndarray:
        if self.hole is None:
            return np.zeros(mesh.n_elements, dtype=bool)
        return self.hole.inside(mesh.centroids)


@dataclass(frozen=True)
class NodalLoad:
    node: int
    force: tuple


@dataclass(frozen=True)
class EdgeTraction:
    edge: str  # bottom | right | top | left
    traction: tuple  # N/mm


@dataclass
class BoundaryConditions:
    fixed: dict = field(default_factory=dict)  # global standard dof -> prescribed value
    nodal: list = field(default_factory=list)
    tractions: list = field(default_factory=list)


def edge_nodes(mesh: QuadMesh, edge: str) -> np.ndarray:
    nx, ny = mesh.nx, mesh.ny
    if edge == "bottom":
        return np.arange(nx + 1)
    if edge == "top":
        return ny * (nx + 1) + np.arange(nx + 1)
    if edge == "left":
        return np.arange(ny + 1) * (nx + 1)
    if edge == "right":
        return np.arange(ny + 1) * (nx + 1) + nx
    raise ValueError(f"unknown edge {edge!r}")


# ---------------------------------------------------------------------------
# Quadrature plans
# ---------------------------------------------------------------------------


@dataclass
class QuadraturePlan:
    points: np.ndarray  # global coordinates (m, 2)
    weights: np.ndarray  # physical weights, sum = element area
    side: np.ndarray | None = None  # crack side of each point for cut elements


def integrate_cut_element(mesh: QuadMesh, e: int, cls: ElementClass | None, crack: CrackPolyline | None = None,
                          order: int | None = None) -> QuadraturePlan:
    """Sub-triangulated quadrature for a split or tip element."""
    if cls is None or cls.kind not in (SPLIT, TIP):
        raise AssemblyError(f"element {e} is not cut by the crack")
    box = mesh.element_bounds(e)
    area = (box[2] - box[0]) * (box[3] - box[1])
    tip = crack.tip_point(cls.tip) if cls.kind == TIP and crack is not None else None
    if cls.kind == TIP and tip is None:
        raise AssemblyError("tip element quadrature needs the crack geometry")
    tris = triangulate_cut(box, cls.pieces, tip=tip)
    areas = np.array([triangle_area(t) for t in tris])
    keep = areas >= 1e-12 * area
    if not np.all(keep):
        log.info("element %d: dropped %d degenerate sub-triangles", e, int((~keep).sum()))
        tris = [t for t, k in zip(tris, keep) if k]
        areas = areas[keep] * (area / areas[keep].sum())
    if order is None:
        order = 7 if cls.kind == TIP else 3
    bary, w = TRIANGLE_RULES[order]
    V = np.array([np.array(t) for t in tris])  # (nt, 3, 2)
    pts = np.einsum("qk,tkj->tqj", bary, V).reshape(-1, 2)
    wts = (areas[:, None] * w[None, :]).ravel()
    side = None
    if crack is not None:
        cent = V.mean(axis=1)
        side = np.repeat(signed_side(cent, crack), len(w))
    return QuadraturePlan(pts, wts, side)


def _gauss_plan(mesh: QuadMesh, e: int, order: int) -> QuadraturePlan:
    x0, y0, x1, y1 = mesh.element_bounds(e)
    rule = gauss_rule(order)
    hx, hy = x1 - x0, y1 - y0
    pts = np.column_stack([x0 + 0.5 * hx * (1 + rule.points[:, 0]), y0 + 0.5 * hy * (1 + rule.points[:, 1])])
    return QuadraturePlan(pts, rule.weights * 0.25 * hx * hy)


# ---------------------------------------------------------------------------
# Element kernels
# ---------------------------------------------------------------------------


@dataclass
class ElementKernel:
    dofs: np.ndarray
    B: np.ndarray  # (m, 3, ndof)
    weights: np.ndarray
    points: np.ndarray
    E: np.ndarray
    n_std: int = 8


def _reference_coords(mesh: QuadMesh, e: int, pts: np.ndarray) -> np.ndarray:
    x0, y0, x1, y1 = mesh.element_bounds(e)
    return np.column_stack([2 * (pts[:, 0] - x0) / (x1 - x0) - 1, 2 * (pts[:, 1] - y0) / (y1 - y0) - 1])


def element_plan(mesh: QuadMesh, e: int, cls: ElementClass | None, crack: CrackPolyline, dofmap: DofMap) -> QuadraturePlan:
    conn = mesh.elements[e]
    has_tip = any(getattr(dofmap.node_state.get(int(n)), "kind", None) == "T" for n in conn)
    if cls is not None and cls.kind in (SPLIT, TIP):
        return integrate_cut_element(mesh, e, cls, crack, order=7 if (cls.kind == TIP or has_tip) else 3)
    return _gauss_plan(mesh, e, BLENDING_TIP_ORDER if has_tip else 2)


def element_kernel(mesh: QuadMesh, e: int, cls: ElementClass | None, crack: CrackPolyline, dofmap: DofMap,
                   materials: MaterialField, plan: QuadraturePlan | None = None) -> ElementKernel:
    """Strain-displacement operators of one element at its quadrature points."""
    conn = mesh.elements[e]
    if plan is None:
        plan = element_plan(mesh, e, cls, crack, dofmap)
    pts = plan.points
    m = pts.shape[0]
    xi = _reference_coords(mesh, e, pts)
    N, dN = shape_functions_batch(xi)
    xy = mesh.nodes[conn]
    J = np.einsum("ai,maj->mij", xy, dN)
    detJ = np.linalg.det(J)
    if np.any(detJ <= 0):
        raise AssemblyError(f"element {e} has a non-positive Jacobian")
    G = np.einsum("maj,mji->mai", dN, np.linalg.inv(J))  # global shape gradients (m, 4, 2)

    H = None
    if plan.side is not None:
        H = plan.side
    cols_dofs = [dofmap.standard_dofs(int(n)) for n in conn]
    funcs = []  # (node local index, psi (m,), grad psi (m,2))
    for a, n in enumerate(conn):
        st = dofmap.node_state.get(int(n))
        if st is None:
            continue
        if st.kind == "H":
            h = H if H is not None else signed_side(pts, crack)
            funcs.append((a, h - st.sign, np.zeros((m, 2))))
            cols_dofs.append(st.dofs)
        else:
            phi, gphi = branch_global(pts, st.frame)
            for alpha in range(4):
                funcs.append((a, phi[:, alpha] - st.values[alpha], gphi[:, alpha, :]))
            cols_dofs.append(st.dofs)

    ndof = 8 + 2 * len(funcs)
    B = np.zeros((m, 3, ndof))
    for a in range(4):
        B[:, 0, 2 * a] = G[:, a, 0]
        B[:, 1, 2 * a + 1] = G[:, a, 1]
        B[:, 2, 2 * a] = G[:, a, 1]
        B[:, 2, 2 * a + 1] = G[:, a, 0]
    for k, (a, psi, gpsi) in enumerate(funcs):
        gx = G[:, a, 0] * psi + N[:, a] * gpsi[:, 0]
        gy = G[:, a, 1] * psi + N[:, a] * gpsi[:, 1]
        c = 8 + 2 * k
        B[:, 0, c] = gx
        B[:, 1, c + 1] = gy
        B[:, 2, c] = gy
        B[:, 2, c + 1] = gx
    dofs = np.concatenate(cols_dofs)
    return ElementKernel(dofs=dofs, B=B, weights=plan.weights, points=pts, E=materials.E_at(pts))


def element_stiffness(mesh: QuadMesh, e: int, cls: ElementClass | None, crack: CrackPolyline,
                      materials: MaterialField, dofmap: DofMap) -> tuple[np.ndarray, np.ndarray]:
    """Dense element stiffness over [standard | enriched] DOFs and their global indices."""
    ker = element_kernel(mesh, e, cls, crack, dofmap, materials)
    Dn = Material(1.0, materials.nu).D()
    Ke = np.einsum("m,mik,ij,mjl->kl", ker.weights * ker.E, ker.B, Dn, ker.B)
    Ke = 0.5 * (Ke + Ke.T)
    return Ke, ker.dofs


# ---------------------------------------------------------------------------
# Global system
# ---------------------------------------------------------------------------


@dataclass
class BlockStiffness:
    """Reduced (Dirichlet-eliminated) stiffness over the system DOFs.

    ``dofs[i]`` is the global DofMap index of system row ``i``; standard DOFs
    come first, enriched DOFs follow in append order.  Retired DOFs stay in
    the system as decoupled rows with a fixed diagonal.
    """

    K: sp.csc_matrix
    dofs: np.ndarray
    n_standard: int
    kind: np.ndarray  # per system row: 0 standard, 1 heaviside, 2 tip, -1 retired

    @property
    def size(self) -> int:
        return self.K.shape[0]

    def block(self, rows: str, cols: str) -> sp.csc_matrix:
        code = {"u": 0, "a": 1, "b": 2}
        r = np.flatnonzero(self.kind == code[rows])
        c = np.flatnonzero(self.kind == code[cols])
        return self.K[r][:, c]


def standard_element_matrices(mesh: QuadMesh, materials: MaterialField):
    """Per-element 8x8 stiffness of every element with the 2x2 rule (vectorised).

    The mesh is uniform, so the reference operators are shared and only the
    quadrature-point modulus varies between elements.
    """
    rule = gauss_rule(2)
    N, dN = shape_functions_batch(rule.points)
    hx, hy = mesh.hx, mesh.hy
    Jinv = np.diag([2.0 / hx, 2.0 / hy])
    detJ = 0.25 * hx * hy
    G = dN @ Jinv  # (4q, 4a, 2)
    B = np.zeros((4, 3, 8))
    B[:, 0, 0::2] = G[:, :, 0]
    B[:, 1, 1::2] = G[:, :, 1]
    B[:, 2, 0::2] = G[:, :, 1]
    B[:, 2, 1::2] = G[:, :, 0]
    Dn = Material(1.0, materials.nu).D()
    Mq = np.einsum("q,qik,ij,qjl->qkl", rule.weights * detJ, B, Dn, B)
    xy = mesh.nodes[mesh.elements]
    qp = np.einsum("qa,eai->eqi", N, xy)
    Eq = materials.E_at(qp.reshape(-1, 2)).reshape(mesh.n_elements, 4)
    return np.einsum("eq,qkl->ekl", Eq, Mq)


def _coo_to_csc(rows, cols, vals, n) -> sp.csc_matrix:
    K = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsc()
    K.sum_duplicates()
    K.sort_indices()
    return K


class SystemLayout:
    """Maps global DofMap indices to rows of the reduced system."""

    def __init__(self, mesh: QuadMesh, materials: MaterialField, bcs: BoundaryConditions):
        void = materials.void_elements(mesh)
        used = np.zeros(mesh.n_nodes, dtype=bool)
        used[mesh.elements[~void].ravel()] = True
        removed = np.zeros(2 * mesh.n_nodes, dtype=bool)
        removed[np.repeat(~used, 2)] = True
        fixed = np.array(sorted(bcs.fixed), dtype=np.int64)
        removed[fixed] = True
        self.removed_std = removed
        self.orphan_nodes = np.flatnonzero(~used)
        self.void = void
        self.fixed = fixed
        self.fixed_values = np.array([bcs.fixed[i] for i in fixed], dtype=float)
        self.std_free = np.flatnonzero(~removed)
        self.n_standard = self.std_free.size
        self.n_std_global = 2 * mesh.n_nodes
        _check_supports(mesh, fixed)

    def system_dofs(self, dofmap: DofMap) -> np.ndarray:
        return np.concatenate([self.std_free, np.arange(self.n_std_global, dofmap.size)])

    def position(self, dofmap: DofMap) -> np.ndarray:
        pos = np.full(dofmap.size, -1, dtype=np.int64)
        sd = self.system_dofs(dofmap)
        pos[sd] = np.arange(sd.size)
        return pos


def _check_supports(mesh: QuadMesh, fixed: np.ndarray) -> None:
    """Raise if the supports leave a rigid-body mode of the plate free."""
    xy = mesh.nodes - mesh.nodes.mean(axis=0)
    modes = np.zeros((2 * mesh.n_nodes, 3))
    modes[0::2, 0] = 1.0
    modes[1::2, 1] = 1.0
    modes[0::2, 2] = -xy[:, 1]
    modes[1::2, 2] = xy[:, 0]
    R = modes[fixed]
    _, sv, Vt = np.linalg.svd(R) if R.size else (None, np.zeros(0), np.eye(3))
    rank = int(np.sum(sv > 1e-10 * max(1.0, sv.max(initial=0.0))))
    if rank < 3:
        null = modes @ Vt[rank]
        raise SingularSystemError(f"supports leave {3 - rank} rigid-body mode(s) unconstrained", null / np.linalg.norm(null))


def _enriched_elements(mesh: QuadMesh, dofmap: DofMap, void: np.ndarray) -> list[int]:
    els = set(int(e) for e, c in dofmap.classes.items())
    if dofmap.node_state:
        node_els = mesh.node_elements()
        for n in dofmap.node_state:
            els.update(node_els[n])
    return sorted(e for e in els if not void[e])


def _enriched_triplets(Ke: np.ndarray, dofs: np.ndarray):
    """Entries of an element matrix outside its standard-standard block."""
    nd = dofs.size
    r, c = np.meshgrid(np.arange(nd), np.arange(nd), indexing="ij")
    mask = (r >= 8) | (c >= 8)
    return dofs[r[mask]], dofs[c[mask]], Ke[mask]


def mask_value(materials: MaterialField) -> float:
    return float(materials.base.E)


def load_vector(mesh: QuadMesh, crack: CrackPolyline, dofmap: DofMap, materials: MaterialField,
                bcs: BoundaryConditions) -> np.ndarray:
    """Global load vector over all DofMap indices (before elimination)."""
    F = np.zeros(dofmap.size)
    for ld in bcs.nodal:
        F[2 * ld.node] += ld.force[0]
        F[2 * ld.node + 1] += ld.force[1]
    g, w = np.polynomial.legendre.leggauss(4)
    for tr in bcs.tractions:
        nodes = edge_nodes(mesh, tr.edge)
        t = np.asarray(tr.traction, dtype=float)
        for a, b in zip(nodes[:-1], nodes[1:]):
            pa, pb = mesh.nodes[a], mesh.nodes[b]
            L = float(np.hypot(*(pb - pa)))
            for n in (a, b):
                F[2 * n: 2 * n + 2] += 0.5 * L * t
            for n, other in ((a, b), (b, a)):
                st = dofmap.node_state.get(int(n))
                if st is None:
                    continue
                s = 0.5 * (1 + g)
                pts = mesh.nodes[n][None, :] * (1 - s)[:, None] + mesh.nodes[other][None, :] * s[:, None]
                Nn = 1 - s
                ww = 0.5 * w * L
                if st.kind == "H":
                    psi = signed_side(pts, crack)[:, None] - st.sign
                else:
                    phi, _ = branch_global(pts, st.frame)
                    psi = phi - st.values[None, :]
                for k in range(psi.shape[1]):
                    F[st.dofs[2 * k]: st.dofs[2 * k] + 2] += np.sum(ww * Nn * psi[:, k]) * t
    F[np.fromiter(dofmap.retired, dtype=np.int64, count=len(dofmap.retired))] = 0.0
    return F


def _standard_global(mesh: QuadMesh, materials: MaterialField, void: np.ndarray) -> sp.csc_matrix:
    Ke = standard_element_matrices(mesh, materials)
    live = np.flatnonzero(~void)
    conn = mesh.elements[live]
    dofs = np.empty((live.size, 8), dtype=np.int64)
    dofs[:, 0::2] = 2 * conn
    dofs[:, 1::2] = 2 * conn + 1
    rows = np.repeat(dofs, 8, axis=1).ravel()
    cols = np.tile(dofs, (1, 8)).ravel()
    return _coo_to_csc(rows, cols, Ke[live].ravel(), 2 * mesh.n_nodes)


def _pad(K: sp.csc_matrix, n: int) -> sp.csc_matrix:
    m = K.shape[0]
    if n == m:
        return K
    return sp.csc_matrix((K.data, K.indices, np.concatenate([K.indptr, np.full(n - m, K.indptr[-1])])), shape=(n, n))


def _system(Kuu_global: sp.csc_matrix, Kuu_sys: sp.csc_matrix, triplets, F: np.ndarray, dofmap: DofMap,
            layout: SystemLayout, materials: MaterialField):
    """Reduced system: standard block + enriched triplets + masked retired diagonal."""
    sd = layout.system_dofs(dofmap)
    pos = layout.position(dofmap)
    N = sd.size
    K = _pad(Kuu_sys, N)
    F = F.copy()
    nonzero_bc = layout.fixed.size and np.any(layout.fixed_values != 0.0)
    if nonzero_bc:
        F[layout.std_free] -= Kuu_global[layout.std_free][:, layout.fixed] @ layout.fixed_values
    if triplets:
        r = np.concatenate([t[0] for t in triplets])
        c = np.concatenate([t[1] for t in triplets])
        v = np.concatenate([t[2] for t in triplets])
        pr, pc = pos[r], pos[c]
        if nonzero_bc:
            ub = np.zeros(dofmap.size)
            ub[layout.fixed] = layout.fixed_values
            fix = (pr >= 0) & (pc < 0)
            np.add.at(F, r[fix], -v[fix] * ub[c[fix]])
        keep = (pr >= 0) & (pc >= 0)
        K = K + _coo_to_csc(pr[keep], pc[keep], v[keep], N)
    Fs = F[sd]
    kind = np.zeros(N, dtype=np.int8)
    for st in dofmap.node_state.values():
        kind[pos[st.dofs]] = 1 if st.kind == "H" else 2
    if dofmap.retired:
        ret = np.sort(pos[np.fromiter(dofmap.retired, dtype=np.int64, count=len(dofmap.retired))])
        kind[ret] = -1
        K = K + sp.csc_matrix((np.full(ret.size, mask_value(materials)), (ret, ret)), shape=(N, N))
        Fs[ret] = 0.0
    K = sp.csc_matrix(K)
    K.sort_indices()
    return BlockStiffness(K=K, dofs=sd, n_standard=layout.n_standard, kind=kind), Fs


def _reduce_standard(Kuu: sp.csc_matrix, layout: SystemLayout) -> sp.csc_matrix:
    K = Kuu[layout.std_free][:, layout.std_free].tocsc()
    K.sort_indices()
    return K


def assemble_full(mesh: QuadMesh, crack: CrackPolyline, dofmap: DofMap, materials: MaterialField,
                  bcs: BoundaryConditions, layout: SystemLayout | None = None):
    """Global re-assembly of the whole system from scratch."""
    layout = layout or SystemLayout(mesh, materials, bcs)
    Kuu = _standard_global(mesh, materials, layout.void)
    triplets = []
    for e in _enriched_elements(mesh, dofmap, layout.void):
        Ke, dofs = element_stiffness(mesh, e, dofmap.classes.get(e), crack, materials, dofmap)
        triplets.append(_enriched_triplets(Ke, dofs))
    F = load_vector(mesh, crack, dofmap, materials, bcs)
    return _system(Kuu, _reduce_standard(Kuu, layout), triplets, F, dofmap, layout, materials)


def _element_signature(mesh: QuadMesh, e: int, dofmap: DofMap):
    parts = [dofmap.classes.get(e)]
    for n in mesh.elements[e]:
        st = dofmap.node_state.get(int(n))
        if st is None:
            parts.append(None)
        else:
            parts.append((st.kind, tuple(int(i) for i in st.dofs), st.sign, st.tip, st.generation))
    return tuple(parts)


class Assembler:
    """Keeps per-element enriched contributions so later steps re-integrate only what changed."""

    def __init__(self, mesh: QuadMesh, materials: MaterialField, bcs: BoundaryConditions):
        self.mesh = mesh
        self.materials = materials
        self.bcs = bcs
        self.layout = SystemLayout(mesh, materials, bcs)
        self._Kuu = _standard_global(mesh, materials, self.layout.void)
        self._Kuu_sys = _reduce_standard(self._Kuu, self.layout)
        self._store: dict[int, tuple] = {}
        self.integrated_last = 0
        self.integrated_total = 0

    def assemble_full(self, crack: CrackPolyline, dofmap: DofMap):
        return assemble_full(self.mesh, crack, dofmap, self.materials, self.bcs, self.layout)

    def standard_block(self) -> sp.csc_matrix:
        """K_uu over the free standard DOFs; the same object on every step."""
        return self._Kuu_sys

    def assemble_delta(self, previous: BlockStiffness | None, crack: CrackPolyline, dofmap: DofMap,
                       changed_elements=None):
        """Re-integrate only elements whose class or node enrichments changed.

        Returns the new system, its load vector, and the set of system rows
        that differ from ``previous`` (rows of changed elements plus appended
        and retired DOFs).
        """
        current = _enriched_elements(self.mesh, dofmap, self.layout.void)
        cur_set = set(current)
        touched_dofs: set[int] = set()
        recomputed = []
        for e in list(self._store):
            if e not in cur_set:
                touched_dofs.update(int(i) for i in self._store.pop(e)[1][0])
        for e in current:
            sig = _element_signature(self.mesh, e, dofmap)
            old = self._store.get(e)
            if old is not None and old[0] == sig:
                continue
            if old is not None:
                touched_dofs.update(int(i) for i in old[1][0])
            Ke, dofs = element_stiffness(self.mesh, e, dofmap.classes.get(e), crack, self.materials, dofmap)
            self._store[e] = (sig, _enriched_triplets(Ke, dofs))
            touched_dofs.update(int(i) for i in dofs)
            recomputed.append(e)
        if changed_elements is not None and set(changed_elements) != set(recomputed):
            raise AssemblyError(
                f"changed elements {sorted(set(changed_elements))} disagree with enrichment changes {sorted(recomputed)}"
            )
        self.integrated_last = len(recomputed)
        self.integrated_total += len(recomputed)

        triplets = [self._store[e][1] for e in sorted(self._store)]
        F = load_vector(self.mesh, crack, dofmap, self.materials, self.bcs)
        blk, Fs = _system(self._Kuu, self._Kuu_sys, triplets, F, dofmap, self.layout, self.materials)

        pos = self.layout.position(dofmap)
        changed = {int(pos[d]) for d in touched_dofs if d < pos.size and pos[d] >= 0}
        if previous is not None:
            changed.update(range(previous.size, blk.size))
            prev_ret = previous.kind == -1
            now_ret = blk.kind[: previous.size] == -1
            changed.update(int(i) for i in np.flatnonzero(prev_ret != now_ret))
        else:
            changed.update(range(blk.n_standard, blk.size))
        return blk, Fs, changed

    def recomputed_elements(self) -> int:
        return self.integrated_last


def check_definite(K: sp.spmatrix) -> None:
    """Raise SingularSystemError with a null-space estimate if K is singular."""
    import scipy.sparse.linalg as spla

    try:
        vals, vecs = spla.eigsh(K.tocsc(), k=1, sigma=0.0, which="LM")
    except Exception as exc:  # factorisation of K itself failed: exactly singular
        raise SingularSystemError(f"stiffness matrix is singular: {exc}") from exc
    scale = abs(K.diagonal()).max()
    if vals[0] <= 1e-12 * scale:
        raise SingularSystemError("stiffness matrix has an unconstrained rigid-body mode", vecs[:, 0])
