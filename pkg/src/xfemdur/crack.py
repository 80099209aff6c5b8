"""Crack geometry: polyline representation, side queries, element classification."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mesh import MeshError, QuadMesh

SEGMENT_TOL = 1e-9  # mm, minimum segment / crossing length

STANDARD, SPLIT, TIP = 0, 1, 2


class CrackStateError(RuntimeError):
    pass


class OutOfDomainError(MeshError):
    pass


@dataclass(frozen=True)
class TipFrame:
    origin: np.ndarray
    tangent: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.tangent, dtype=float)
        norm = math.hypot(t[0], t[1])
        if norm == 0.0:
            raise CrackStateError("tip frame needs a non-zero tangent")
        object.__setattr__(self, "tangent", t / norm)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))

    @property
    def normal(self) -> np.ndarray:
        return np.array([-self.tangent[1], self.tangent[0]])

    @property
    def angle(self) -> float:
        return math.atan2(self.tangent[1], self.tangent[0])


@dataclass
class CrackPolyline:
    """Ordered chain of crack vertices.

    Tip 0 is the first vertex, tip 1 the last one.  An edge crack keeps one of
    them inactive (the one sitting on the boundary).  Segments carry stable ids
    so that growth at tip 0 (prepending) does not renumber older segments.
    """

    vertices: list
    active: list = field(default_factory=lambda: [False, True])
    segment_ids: list = field(default_factory=list)
    history: list = field(default_factory=list)
    _next_id: int = 0

    def __post_init__(self):
        self.vertices = [np.asarray(v, dtype=float) for v in self.vertices]
        if len(self.vertices) < 2:
            raise CrackStateError("a crack needs at least two vertices")
        for a, b in zip(self.vertices[:-1], self.vertices[1:]):
            if np.hypot(*(b - a)) <= SEGMENT_TOL:
                raise CrackStateError("consecutive crack vertices coincide")
        if not self.segment_ids:
            self.segment_ids = list(range(len(self.vertices) - 1))
        self._next_id = max(self.segment_ids) + 1
        self.active = list(self.active)

    @classmethod
    def edge(cls, vertices, tip: str = "end") -> "CrackPolyline":
        return cls(vertices, active=[tip == "start", tip == "end"])

    @classmethod
    def center(cls, vertices) -> "CrackPolyline":
        return cls(vertices, active=[True, True])

    def copy(self) -> "CrackPolyline":
        return CrackPolyline(
            [v.copy() for v in self.vertices],
            active=list(self.active),
            segment_ids=list(self.segment_ids),
            history=list(self.history),
        )

    @property
    def n_segments(self) -> int:
        return len(self.vertices) - 1

    def segment_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        V = np.asarray(self.vertices)
        return V[:-1], V[1:]

    def tip_point(self, tip: int) -> np.ndarray:
        return self.vertices[0 if tip == 0 else -1]

    def tip_frame(self, tip: int) -> TipFrame:
        if tip == 0:
            return TipFrame(self.vertices[0], self.vertices[0] - self.vertices[1])
        return TipFrame(self.vertices[-1], self.vertices[-1] - self.vertices[-2])

    def active_tips(self) -> list[int]:
        return [t for t in (0, 1) if self.active[t]]

    def grow(self, tip: int, new_point, step: int | None = None) -> int:
        """Append a segment at ``tip``; returns the new segment id."""
        if not self.active[tip]:
            raise CrackStateError(f"tip {tip} is not active")
        p = np.asarray(new_point, dtype=float)
        if np.hypot(*(p - self.tip_point(tip))) <= SEGMENT_TOL:
            raise CrackStateError("growth increment below the segment tolerance")
        sid = self._next_id
        self._next_id += 1
        if tip == 0:
            self.vertices.insert(0, p)
            self.segment_ids.insert(0, sid)
        else:
            self.vertices.append(p)
            self.segment_ids.append(sid)
        self.history.append((step, tip, sid))
        return sid

    def deactivate(self, tip: int) -> None:
        self.active[tip] = False

    def translated(self, shift) -> "CrackPolyline":
        c = self.copy()
        c.vertices = [v + np.asarray(shift, dtype=float) for v in c.vertices]
        return c


def signed_side(points, crack: CrackPolyline) -> np.ndarray:
    """+1 on the left-normal side of the nearest crack segment, -1 on the other.

    Nearest-vertex ties between two segments use the bisector of their normals;
    beyond the polyline ends the supporting line of the end segment decides.
    Points exactly on the crack get +1.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    A, B = crack.segment_arrays()
    if A.shape[0] == 0:
        raise CrackStateError("degenerate crack polyline")
    D = B - A
    L2 = np.einsum("ij,ij->i", D, D)
    if np.any(L2 <= SEGMENT_TOL**2):
        raise CrackStateError("degenerate crack polyline")
    Nrm = np.column_stack([-D[:, 1], D[:, 0]]) / np.sqrt(L2)[:, None]

    rel = P[:, None, :] - A[None, :, :]
    t = np.einsum("mkj,kj->mk", rel, D) / L2
    tc = np.clip(t, 0.0, 1.0)
    closest = A[None] + tc[..., None] * D[None]
    d2 = np.sum((P[:, None, :] - closest) ** 2, axis=2)
    k = np.argmin(d2, axis=1)
    m = np.arange(P.shape[0])
    tk = t[m, k]
    nseg = A.shape[0]

    s = np.einsum("ij,ij->i", P - A[k], Nrm[k])
    at_start = (tk <= 0.0) & (k > 0)
    at_end = (tk >= 1.0) & (k < nseg - 1)
    if np.any(at_start):
        kk = k[at_start]
        bis = Nrm[kk] + Nrm[kk - 1]
        s[at_start] = np.einsum("ij,ij->i", P[at_start] - A[kk], bis)
    if np.any(at_end):
        kk = k[at_end]
        bis = Nrm[kk] + Nrm[kk + 1]
        s[at_end] = np.einsum("ij,ij->i", P[at_end] - B[kk], bis)
    return np.where(s >= 0.0, 1.0, -1.0)


def tip_polar(point, frame: TipFrame) -> tuple[float, float]:
    r, th = tip_polar_batch(np.atleast_2d(point), frame)
    return float(r[0]), float(th[0])


def tip_polar_batch(points: np.ndarray, frame: TipFrame) -> tuple[np.ndarray, np.ndarray]:
    rel = np.asarray(points, dtype=float) - frame.origin
    x1 = rel @ frame.tangent
    x2 = rel @ frame.normal
    r = np.hypot(x1, x2)
    th = np.arctan2(x2, x1)
    th = np.where(th <= -np.pi, np.pi, th)
    th = np.where(r == 0.0, 0.0, th)
    return r, th


def clip_segment(p, q, box) -> tuple[np.ndarray, np.ndarray] | None:
    """Liang-Barsky clip of segment p-q against (xmin, ymin, xmax, ymax)."""
    xmin, ymin, xmax, ymax = box
    d = q - p
    t0, t1 = 0.0, 1.0
    for pk, qk in ((-d[0], p[0] - xmin), (d[0], xmax - p[0]), (-d[1], p[1] - ymin), (d[1], ymax - p[1])):
        if pk == 0.0:
            if qk < 0.0:
                return None
            continue
        r = qk / pk
        if pk < 0.0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
        if t0 > t1:
            return None
    return p + t0 * d, p + t1 * d


@dataclass(frozen=True)
class ElementClass:
    kind: int
    segments: tuple = ()
    pieces: tuple = ()  # clipped crack pieces inside the element, polyline order
    tip: int | None = None

    @property
    def name(self) -> str:
        return ("standard", "split", "tip")[self.kind]


def classify_elements(mesh: QuadMesh, crack: CrackPolyline) -> dict[int, ElementClass]:
    """Split/tip classification; elements absent from the result are standard."""
    tip_elements = {}
    for tip in crack.active_tips():
        p = crack.tip_point(tip)
        if not mesh.domain.contains(p):
            raise OutOfDomainError(f"crack tip {tip} at {tuple(p)} is outside the mesh")
        tip_elements[mesh.locate(p)] = tip

    A, B = crack.segment_arrays()
    crossings: dict[int, list] = {}
    for idx in range(A.shape[0]):
        a, b = A[idx], B[idx]
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        for e in mesh.elements_in_box(lo[0], lo[1], hi[0], hi[1]):
            clipped = clip_segment(a, b, mesh.element_bounds(e))
            if clipped is None:
                continue
            c0, c1 = clipped
            if np.hypot(*(c1 - c0)) <= SEGMENT_TOL:
                continue
            crossings.setdefault(int(e), []).append((crack.segment_ids[idx], (tuple(c0), tuple(c1))))

    out: dict[int, ElementClass] = {}
    for e, items in crossings.items():
        segs = tuple(s for s, _ in items)
        pieces = tuple(pc for _, pc in items)
        if e in tip_elements:
            out[e] = ElementClass(TIP, segs, pieces, tip_elements[e])
        else:
            out[e] = ElementClass(SPLIT, segs, pieces)
    for e, tip in tip_elements.items():
        if e not in out:
            raise CrackStateError(f"tip element {e} has no crack crossing")
    return out


def kind_array(n_elements: int, classes: dict[int, ElementClass]) -> np.ndarray:
    kinds = np.zeros(n_elements, dtype=np.int8)
    for e, c in classes.items():
        kinds[e] = c.kind
    return kinds


def nudge_off_edges(point, direction, mesh: QuadMesh, da: float) -> np.ndarray:
    """Shift a tip sitting within 1e-6 h of a mesh line by 1e-4 da along ``direction``."""
    p = np.asarray(point, dtype=float).copy()
    d = np.asarray(direction, dtype=float)
    d = d / np.hypot(d[0], d[1])
    for _ in range(8):
        fx = (p[0] - mesh.domain.x0) / mesh.hx
        fy = (p[1] - mesh.domain.y0) / mesh.hy
        near_x = abs(fx - round(fx)) * mesh.hx < 1e-6 * mesh.h
        near_y = abs(fy - round(fy)) * mesh.hy < 1e-6 * mesh.h
        if not (near_x or near_y):
            break
        p = p + 1e-4 * da * d
    return p


# ---------------------------------------------------------------------------
# Conforming sub-triangulation of cut rectangles
# ---------------------------------------------------------------------------


def _perimeter_coord(p, box) -> float:
    xmin, ymin, xmax, ymax = box
    w, h = xmax - xmin, ymax - ymin
    tol = 1e-9 * max(w, h)
    x, y = p
    if abs(y - ymin) <= tol and x < xmax - tol:
        return x - xmin
    if abs(x - xmax) <= tol and y < ymax - tol:
        return w + (y - ymin)
    if abs(y - ymax) <= tol and x > xmin + tol:
        return w + h + (xmax - x)
    if abs(x - xmin) <= tol:
        return 2 * w + h + (ymax - y)
    return -1.0


def _on_boundary(p, box) -> bool:
    return _perimeter_coord(p, box) >= 0.0


def _corners(box):
    xmin, ymin, xmax, ymax = box
    w, h = xmax - xmin, ymax - ymin
    return [((xmin, ymin), 0.0), ((xmax, ymin), w), ((xmax, ymax), w + h), ((xmin, ymax), 2 * w + h)]


def _perimeter_walk(s_from, s_to, box):
    """Corners met walking counter-clockwise strictly between two perimeter coordinates."""
    xmin, ymin, xmax, ymax = box
    per = 2 * ((xmax - xmin) + (ymax - ymin))
    span = (s_to - s_from) % per
    out = []
    for c, s in sorted(_corners(box), key=lambda cs: (cs[1] - s_from) % per):
        d = (s - s_from) % per
        if 1e-12 * per < d < span - 1e-12 * per:
            out.append(c)
    return out


def _polygon_area(poly) -> float:
    P = np.asarray(poly)
    return 0.5 * float(np.sum(P[:, 0] * np.roll(P[:, 1], -1) - np.roll(P[:, 0], -1) * P[:, 1]))


def _ear_clip(poly) -> list:
    pts = [np.asarray(p, dtype=float) for p in poly]
    if _polygon_area(pts) < 0:
        pts = pts[::-1]
    idx = list(range(len(pts)))
    tris = []

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    scale = max(np.ptp(np.asarray(pts)[:, 0]), np.ptp(np.asarray(pts)[:, 1])) ** 2
    guard = 0
    while len(idx) > 3 and guard < 10 * len(pts) ** 2:
        guard += 1
        for k in range(len(idx)):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            a, b, c = pts[i0], pts[i1], pts[i2]
            cr = cross(a, b, c)
            if cr <= 1e-14 * scale:
                if abs(cr) <= 1e-14 * scale:
                    # collinear vertex: drop it without emitting a triangle
                    idx.pop(k)
                    break
                continue
            inside = False
            for j in idx:
                if j in (i0, i1, i2):
                    continue
                p = pts[j]
                if cross(a, b, p) > 0 and cross(b, c, p) > 0 and cross(c, a, p) > 0:
                    inside = True
                    break
            if inside:
                continue
            tris.append((a, b, c))
            idx.pop(k)
            break
    if len(idx) == 3:
        a, b, c = (pts[i] for i in idx)
        if abs(cross(a, b, c)) > 1e-14 * scale:
            tris.append((a, b, c))
    return tris


def _split_triangle(tri, p, q, tol):
    """Split a triangle by the line through p-q if the segment crosses its interior."""
    d = q - p
    n = np.array([-d[1], d[0]]) / np.hypot(d[0], d[1])
    s = np.array([np.dot(v - p, n) for v in tri])
    side = np.where(s > tol, 1, np.where(s < -tol, -1, 0))
    if not (np.any(side > 0) and np.any(side < 0)):
        return None
    # chord of the line inside the triangle, as parameters along p-q
    L2 = np.dot(d, d)
    ts = []
    for i in range(3):
        a, b = tri[i], tri[(i + 1) % 3]
        sa, sb = s[i], s[(i + 1) % 3]
        if side[i] == 0:
            ts.append(np.dot(a - p, d) / L2)
        if side[i] * side[(i + 1) % 3] < 0:
            x = a + (sa / (sa - sb)) * (b - a)
            ts.append(np.dot(x - p, d) / L2)
    lo, hi = min(ts), max(ts)
    if min(hi, 1.0) - max(lo, 0.0) <= 1e-9:
        return None

    def cut(a, b, sa, sb):
        return a + (sa / (sa - sb)) * (b - a)

    zero = [i for i in range(3) if side[i] == 0]
    if zero:
        i0 = zero[0]
        i1, i2 = (i0 + 1) % 3, (i0 + 2) % 3
        x = cut(tri[i1], tri[i2], s[i1], s[i2])
        return [(tri[i0], tri[i1], x), (tri[i0], x, tri[i2])]
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        if side[i] != side[j] and side[i] != side[k]:
            x = cut(tri[i], tri[j], s[i], s[j])
            y = cut(tri[i], tri[k], s[i], s[k])
            return [(tri[i], x, y), (x, tri[j], tri[k]), (x, tri[k], y)]
    return None


def refine_by_pieces(tris, pieces, tol):
    for p, q in pieces:
        p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
        out = []
        for tri in tris:
            parts = _split_triangle(tri, p, q, tol)
            out.extend(parts if parts is not None else [tri])
        tris = out
    return tris


def _chain(pieces, tol):
    """Concatenate clipped pieces into vertex chains."""
    chains = []
    for p, q in pieces:
        p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
        if chains and np.hypot(*(chains[-1][-1] - p)) <= tol:
            chains[-1].append(q)
        else:
            chains.append([p, q])
    return chains


def triangulate_cut(box, pieces, tip=None) -> list:
    """Triangles of the rectangle ``box`` conforming to the crack ``pieces``.

    Split cells are divided into the two polygons on either side of the crack
    and each is ear-clipped; tip cells are fanned from the tip.  Anything the
    crack still crosses afterwards is split along the crossing piece.
    """
    xmin, ymin, xmax, ymax = box
    size = max(xmax - xmin, ymax - ymin)
    tol = 1e-10 * size
    chains = _chain(pieces, tol)
    tris = None
    if tip is None and len(chains) == 1:
        ch = chains[0]
        if _on_boundary(ch[0], box) and _on_boundary(ch[-1], box):
            s_in, s_out = _perimeter_coord(ch[0], box), _perimeter_coord(ch[-1], box)
            poly1 = [tuple(v) for v in ch] + _perimeter_walk(s_out, s_in, box)
            poly2 = [tuple(v) for v in ch[::-1]] + _perimeter_walk(s_in, s_out, box)
            tris = _ear_clip(poly1) + _ear_clip(poly2)
    elif tip is not None:
        tip = np.asarray(tip, dtype=float)
        bpts = [(c, s) for c, s in _corners(box)]
        for ch in chains:
            for v in (ch[0], ch[-1]):
                s = _perimeter_coord(v, box)
                if s >= 0 and all(np.hypot(*(np.asarray(c) - v)) > tol for c, _ in bpts):
                    bpts.append((tuple(v), s))
        bpts.sort(key=lambda cs: cs[1])
        ring = [np.asarray(c, dtype=float) for c, _ in bpts]
        tris = []
        for k in range(len(ring)):
            a, b = ring[k], ring[(k + 1) % len(ring)]
            cr = (a[0] - tip[0]) * (b[1] - tip[1]) - (a[1] - tip[1]) * (b[0] - tip[0])
            if abs(cr) > 1e-14 * size * size:
                tris.append((tip, a, b))
    if tris is None:
        c = [np.array(v, dtype=float) for v, _ in _corners(box)]
        tris = [(c[0], c[1], c[2]), (c[0], c[2], c[3])]
    tris = [tuple(np.asarray(v, dtype=float) for v in t) for t in tris]
    return refine_by_pieces(tris, pieces, tol)


def triangle_area(tri) -> float:
    a, b, c = tri
    return 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
