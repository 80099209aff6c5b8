"""Structured bilinear quadrilateral meshes and quadrature rules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Rectangle:
    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    def contains(self, p, tol: float = 0.0) -> bool:
        return (self.x0 - tol <= p[0] <= self.x1 + tol) and (self.y0 - tol <= p[1] <= self.y1 + tol)


@dataclass(frozen=True)
class GaussRule:
    points: np.ndarray
    weights: np.ndarray


@dataclass(eq=False)
class QuadMesh:
    """Row-major structured mesh of 4-node quads.

    Node ``j * (nx + 1) + i`` sits at column ``i``, row ``j``.  Element
    ``j * nx + i`` lists its nodes counter-clockwise starting from the
    lower-left corner.
    """

    nodes: np.ndarray
    elements: np.ndarray
    nx: int
    ny: int
    domain: Rectangle
    _centroids: np.ndarray | None = field(default=None, repr=False)
    _node_elements: list | None = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def hx(self) -> float:
        return self.domain.width / self.nx

    @property
    def hy(self) -> float:
        return self.domain.height / self.ny

    @property
    def h(self) -> float:
        """Characteristic element size (geometric mean of the two spacings)."""
        return float(np.sqrt(self.hx * self.hy))

    @property
    def centroids(self) -> np.ndarray:
        if self._centroids is None:
            self._centroids = self.nodes[self.elements].mean(axis=1)
        return self._centroids

    def element_bounds(self, e: int) -> tuple[float, float, float, float]:
        xy = self.nodes[self.elements[e]]
        return xy[0, 0], xy[0, 1], xy[2, 0], xy[2, 1]

    def locate(self, p) -> int:
        """Index of the element containing ``p`` (closed cells, lowest index wins)."""
        if not self.domain.contains(p, tol=1e-12 * max(self.domain.width, self.domain.height)):
            raise MeshError(f"point {tuple(p)} lies outside the mesh domain")
        i = int(np.clip(np.floor((p[0] - self.domain.x0) / self.hx), 0, self.nx - 1))
        j = int(np.clip(np.floor((p[1] - self.domain.y0) / self.hy), 0, self.ny - 1))
        return j * self.nx + i

    def elements_in_box(self, xmin, ymin, xmax, ymax) -> np.ndarray:
        """Elements whose cells intersect the given box."""
        d = self.domain
        i0 = int(np.clip(np.floor((xmin - d.x0) / self.hx), 0, self.nx - 1))
        i1 = int(np.clip(np.floor((xmax - d.x0) / self.hx), 0, self.nx - 1))
        j0 = int(np.clip(np.floor((ymin - d.y0) / self.hy), 0, self.ny - 1))
        j1 = int(np.clip(np.floor((ymax - d.y0) / self.hy), 0, self.ny - 1))
        ii, jj = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1))
        return (jj * self.nx + ii).ravel()

    def node_elements(self) -> list[list[int]]:
        """Elements attached to every node (cached)."""
        if self._node_elements is None:
            out: list[list[int]] = [[] for _ in range(self.n_nodes)]
            for e, conn in enumerate(self.elements):
                for n in conn:
                    out[n].append(e)
            self._node_elements = out
        return self._node_elements

    def jacobian_determinants(self, rule: GaussRule) -> np.ndarray:
        """det J for every element at every point of ``rule``; shape (n_elements, n_points)."""
        xy = self.nodes[self.elements]
        dets = []
        for xi in rule.points:
            _, dN = shape_functions(xi)
            J = np.einsum("eai,aj->eij", xy, dN)
            dets.append(np.linalg.det(J))
        return np.stack(dets, axis=1)


def build_mesh(domain: Rectangle, nx: int, ny: int) -> QuadMesh:
    if nx < 1 or ny < 1:
        raise MeshError(f"element counts must be positive, got nx={nx}, ny={ny}")
    if not (domain.width > 0 and domain.height > 0):
        raise MeshError("domain must have positive width and height")
    xs = np.linspace(domain.x0, domain.x1, nx + 1)
    ys = np.linspace(domain.y0, domain.y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    n0 = (j * (nx + 1) + i).ravel()
    elements = np.column_stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1]).astype(np.int64)
    return QuadMesh(nodes=nodes, elements=elements, nx=nx, ny=ny, domain=domain)


def shape_functions(xi) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear Lagrange values and reference gradients (4x2) at ``xi = (ξ, η)``."""
    s, t = float(xi[0]), float(xi[1])
    N = 0.25 * np.array([(1 - s) * (1 - t), (1 + s) * (1 - t), (1 + s) * (1 + t), (1 - s) * (1 + t)])
    dN = 0.25 * np.array(
        [
            [-(1 - t), -(1 - s)],
            [(1 - t), -(1 + s)],
            [(1 + t), (1 + s)],
            [-(1 + t), (1 - s)],
        ]
    )
    return N, dN


def shape_functions_batch(xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``shape_functions`` for an (m, 2) array of reference points."""
    s, t = xi[:, 0], xi[:, 1]
    N = 0.25 * np.column_stack([(1 - s) * (1 - t), (1 + s) * (1 - t), (1 + s) * (1 + t), (1 - s) * (1 + t)])
    dN = 0.25 * np.stack(
        [
            np.column_stack([-(1 - t), -(1 - s)]),
            np.column_stack([(1 - t), -(1 + s)]),
            np.column_stack([(1 + t), (1 + s)]),
            np.column_stack([-(1 + t), (1 - s)]),
        ],
        axis=1,
    )
    return N, dN


def gauss_rule(order: int = 2) -> GaussRule:
    """Tensor Gauss-Legendre rule on [-1, 1]^2 with ``order`` points per axis."""
    g, w = np.polynomial.legendre.leggauss(order)
    S, T = np.meshgrid(g, g)
    W = np.outer(w, w)
    return GaussRule(points=np.column_stack([S.ravel(), T.ravel()]), weights=W.ravel())


# Symmetric rules on the reference triangle (0,0)-(1,0)-(0,1); barycentric points,
# weights normalised to sum to 1 (multiply by the triangle area).
_A = 0.0597158717897698
_B = 0.4701420641051151
_C = 0.7974269853530873
_D = 0.1012865073234563
TRIANGLE_RULES = {
    3: (
        np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
        np.full(3, 1 / 3),
    ),
    7: (
        np.array(
            [
                [1 / 3, 1 / 3, 1 / 3],
                [_A, _B, _B],
                [_B, _A, _B],
                [_B, _B, _A],
                [_C, _D, _D],
                [_D, _C, _D],
                [_D, _D, _C],
            ]
        ),
        np.array([0.225] + [0.1323941527885062] * 3 + [0.1259391805448271] * 3),
    ),
}
