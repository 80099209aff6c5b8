"""Enrichment functions and the append-only global DOF map."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .crack import SPLIT, TIP, CrackPolyline, ElementClass, TipFrame, signed_side, triangle_area, triangulate_cut
from .mesh import QuadMesh

SMALL_CUT_FRACTION = 1e-4


def heaviside_shifted(point, node_xy, crack: CrackPolyline) -> float:
    """H(x) - H(x_I): 0 on the node's side of the crack, +-2 on the other."""
    s = signed_side(np.vstack([point, node_xy]), crack)
    return float(s[0] - s[1])


def branch_functions(r: float, theta: float) -> tuple[np.ndarray, np.ndarray]:
    """The four crack-tip functions and their gradients in the tip frame.

    Gradient rows are (d/dx1, d/dx2) with x1 along the crack tangent.  The
    gradient is singular at r = 0 and returned as inf there.
    """
    phi, grad = branch_functions_batch(np.array([r], dtype=float), np.array([theta], dtype=float))
    return phi[0], grad[0]


def branch_functions_batch(r: np.ndarray, th: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sr = np.sqrt(r)
    s2, c2 = np.sin(th / 2), np.cos(th / 2)
    s, c = np.sin(th), np.cos(th)
    phi = sr[:, None] * np.column_stack([s2, c2, s * s2, s * c2])

    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / (2.0 * sr)
        # d/dr and (1/r) d/dtheta of each function
        dr = inv[:, None] * np.column_stack([s2, c2, s * s2, s * c2])
        dt = inv[:, None] * np.column_stack(
            [c2, -s2, 2 * c * s2 + s * c2, 2 * c * c2 - s * s2]
        )
        d1 = c[:, None] * dr - s[:, None] * dt
        d2 = s[:, None] * dr + c[:, None] * dt
    grad = np.stack([d1, d2], axis=2)
    grad[r == 0.0] = np.inf
    return phi, grad


def branch_global(points: np.ndarray, frame: TipFrame) -> tuple[np.ndarray, np.ndarray]:
    """Branch functions at global points with gradients rotated to global axes."""
    from .crack import tip_polar_batch

    r, th = tip_polar_batch(points, frame)
    phi, g = branch_functions_batch(r, th)
    R = np.column_stack([frame.tangent, frame.normal])  # columns: local axes in global coords
    return phi, g @ R.T


@dataclass
class NodeEnrichment:
    kind: str  # "H" or "T"
    dofs: np.ndarray  # 2 for H, 8 for T (function-major, component-minor)
    sign: float = 0.0  # H(x_I) for Heaviside nodes
    tip: int | None = None
    generation: int | None = None
    frame: TipFrame | None = None
    values: np.ndarray | None = None  # branch functions at the node


@dataclass
class DofMap:
    """Append-only (node, enrichment, component) -> global index map.

    Standard DOFs ``2*I`` and ``2*I + 1`` form the leading block.  Enriched DOFs
    are appended in creation order; when an enrichment is dropped its indices
    move to ``retired`` and are never handed out again.
    """

    n_nodes: int
    next_index: int = 0
    generation: int = 0
    entries: dict = field(default_factory=dict)
    node_state: dict = field(default_factory=dict)
    retired: set = field(default_factory=set)
    tip_frames: dict = field(default_factory=dict)
    tip_generation: dict = field(default_factory=dict)
    classes: dict = field(default_factory=dict)
    _h_serial: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.next_index == 0:
            self.next_index = 2 * self.n_nodes

    @property
    def n_standard(self) -> int:
        return 2 * self.n_nodes

    @property
    def size(self) -> int:
        return self.next_index

    def standard_dofs(self, node: int) -> np.ndarray:
        return np.array([2 * node, 2 * node + 1])

    def node_dofs(self, node: int) -> np.ndarray:
        st = self.node_state.get(node)
        base = self.standard_dofs(node)
        return base if st is None else np.concatenate([base, st.dofs])

    def _append(self, key, count) -> np.ndarray:
        idx = np.arange(self.next_index, self.next_index + count)
        self.next_index += count
        self.entries[key] = idx
        return idx

    def _retire(self, node) -> np.ndarray:
        st = self.node_state.pop(node)
        self.retired.update(int(i) for i in st.dofs)
        return st.dofs

    def copy(self) -> "DofMap":
        return DofMap(
            n_nodes=self.n_nodes,
            next_index=self.next_index,
            generation=self.generation,
            entries=dict(self.entries),
            node_state=dict(self.node_state),
            retired=set(self.retired),
            tip_frames=dict(self.tip_frames),
            tip_generation=dict(self.tip_generation),
            classes=dict(self.classes),
            _h_serial=dict(self._h_serial),
        )

    def active_enriched(self) -> np.ndarray:
        if not self.node_state:
            return np.zeros(0, dtype=np.int64)
        return np.sort(np.concatenate([st.dofs for st in self.node_state.values()]))


def _heaviside_nodes(mesh: QuadMesh, crack: CrackPolyline, classes: dict, excluded: set):
    """Nodes of split elements that carry a non-negligible cut on both sides."""
    areas: dict[int, list] = {}
    for e, c in classes.items():
        if c.kind != SPLIT:
            continue
        tris = triangulate_cut(mesh.element_bounds(e), c.pieces)
        cent = np.array([(t[0] + t[1] + t[2]) / 3.0 for t in tris])
        side = signed_side(cent, crack)
        a = np.array([triangle_area(t) for t in tris])
        plus, minus = a[side > 0].sum(), a[side < 0].sum()
        for n in mesh.elements[e]:
            acc = areas.setdefault(int(n), [0.0, 0.0])
            acc[0] += plus
            acc[1] += minus
    out = []
    for n in sorted(areas):
        if n in excluded:
            continue
        plus, minus = areas[n]
        if min(plus, minus) >= SMALL_CUT_FRACTION * (plus + minus):
            out.append(n)
    return out


def update_dof_map(dofmap: DofMap, classes: dict[int, ElementClass], crack: CrackPolyline, mesh: QuadMesh):
    """Bring the enrichment of every node in line with the current classification.

    Returns the updated map (mutated in place) and the set of changed DOF
    indices: appended, retired, and all DOFs of nodes belonging to elements
    whose class changed since the previous call.
    """
    appended: list[np.ndarray] = []
    retired: list[np.ndarray] = []

    # tip nodes, with a fresh generation whenever the tip has moved
    tip_nodes: dict[int, int] = {}
    for e, c in classes.items():
        if c.kind == TIP:
            for n in mesh.elements[e]:
                tip_nodes[int(n)] = c.tip
    for tip in sorted(set(tip_nodes.values())):
        frame = crack.tip_frame(tip)
        old = dofmap.tip_frames.get(tip)
        if old is None or not (np.array_equal(old.origin, frame.origin) and np.array_equal(old.tangent, frame.tangent)):
            dofmap.tip_frames[tip] = frame
            dofmap.tip_generation[tip] = dofmap.tip_generation.get(tip, -1) + 1

    # drop tip enrichments that no longer match (moved tip or node left the tip set)
    for n in sorted(dofmap.node_state):
        st = dofmap.node_state[n]
        if st.kind == "T":
            keep = tip_nodes.get(n) == st.tip and dofmap.tip_generation.get(st.tip) == st.generation
            if not keep:
                retired.append(dofmap._retire(n))
        elif st.kind == "H" and n in tip_nodes:
            retired.append(dofmap._retire(n))

    for n in sorted(tip_nodes):
        if n in dofmap.node_state:
            continue
        tip = tip_nodes[n]
        gen = dofmap.tip_generation[tip]
        frame = dofmap.tip_frames[tip]
        idx = dofmap._append(("T", n, tip, gen), 8)
        vals, _ = branch_global(mesh.nodes[n][None, :], frame)
        dofmap.node_state[n] = NodeEnrichment("T", idx, tip=tip, generation=gen, frame=frame, values=vals[0])
        appended.append(idx)

    h_nodes = _heaviside_nodes(mesh, crack, classes, set(tip_nodes))
    if h_nodes:
        signs = signed_side(mesh.nodes[h_nodes], crack)
        for n, sgn in zip(h_nodes, signs):
            if n in dofmap.node_state:
                continue
            serial = dofmap._h_serial.get(n, -1) + 1
            dofmap._h_serial[n] = serial
            idx = dofmap._append(("H", n, serial), 2)
            dofmap.node_state[n] = NodeEnrichment("H", idx, sign=float(sgn))
            appended.append(idx)

    changed: set[int] = set()
    for arr in appended + retired:
        changed.update(int(i) for i in arr)
    prev = dofmap.classes
    for e in set(prev) | set(classes):
        if prev.get(e) != classes.get(e):
            for n in mesh.elements[e]:
                changed.update(int(i) for i in dofmap.node_dofs(int(n)))
    dofmap.classes = dict(classes)
    dofmap.generation += 1
    return dofmap, changed
