"""Stress intensity factors, the kink-angle criterion, and crack advance."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .assembly import Material, MaterialField, element_kernel
from .crack import CrackPolyline, nudge_off_edges, tip_polar_batch
from .enrichment import DofMap
from .mesh import QuadMesh, shape_functions_batch

log = logging.getLogger(__name__)

EPS_K = 1e-9


class DomainTooSmall(RuntimeError):
    pass


class NoDrivingForce(RuntimeError):
    pass


@dataclass(frozen=True)
class SifPair:
    K_I: float
    K_II: float
    tip: int = 1
    radius: float = float("nan")


@dataclass(frozen=True)
class GrowthStep:
    angle: float
    da: float

    def __post_init__(self):
        if not -np.pi < self.angle < np.pi:
            raise ValueError("kink angle must lie in (-pi, pi)")
        if not self.da > 0:
            raise ValueError("growth increment must be positive")


def williams_fields(r: np.ndarray, th: np.ndarray, mu: float, kappa: float):
    """Unit-SIF auxiliary fields in the tip frame for modes I and II.

    Returns stresses (2, m, 3) as [s11, s22, s12] and displacement
    gradients (2, m, 2, 2) with ``g[..., i, j] = du_i/dx_j``.
    """
    sr = np.sqrt(r)
    c2, s2 = np.cos(th / 2), np.sin(th / 2)
    c32, s32 = np.cos(1.5 * th), np.sin(1.5 * th)
    c, s = np.cos(th), np.sin(th)
    a = 1.0 / np.sqrt(2 * np.pi * r)
    sig = np.empty((2,) + r.shape + (3,))
    sig[0, :, 0] = a * c2 * (1 - s2 * s32)
    sig[0, :, 1] = a * c2 * (1 + s2 * s32)
    sig[0, :, 2] = a * s2 * c2 * c32
    sig[1, :, 0] = -a * s2 * (2 + c2 * c32)
    sig[1, :, 1] = a * s2 * c2 * c32
    sig[1, :, 2] = a * c2 * (1 - s2 * s32)

    C = 1.0 / (2 * mu * np.sqrt(2 * np.pi))
    # u_i = C sqrt(r) f_i(theta)
    f = np.stack([
        [c2 * (kappa - c), s2 * (kappa - c)],
        [s2 * (kappa + 2 + c), -c2 * (kappa - 2 + c)],
    ])
    fp = np.stack([
        [-0.5 * s2 * (kappa - c) + c2 * s, 0.5 * c2 * (kappa - c) + s2 * s],
        [0.5 * c2 * (kappa + 2 + c) - s2 * s, 0.5 * s2 * (kappa - 2 + c) + c2 * s],
    ])
    dudr = C * f / (2 * sr)
    dudt = C * fp / sr  # (1/r) du/dtheta
    grad = np.empty((2,) + r.shape + (2, 2))
    for mode in range(2):
        for i in range(2):
            grad[mode, :, i, 0] = c * dudr[mode, i] - s * dudt[mode, i]
            grad[mode, :, i, 1] = s * dudr[mode, i] + c * dudt[mode, i]
    return sig, grad


def _clearance(mesh: QuadMesh, tip_xy, materials: MaterialField) -> tuple[float, float]:
    """Distances from the tip to the nearest free boundary and to the inclusion interface."""
    d = mesh.domain
    x, y = tip_xy
    free = min(x - d.x0, d.x1 - x, y - d.y0, d.y1 - y)
    if materials.hole is not None:
        c = materials.hole
        free = min(free, np.hypot(x - c.center[0], y - c.center[1]) - c.radius)
    interface = np.inf
    if materials.inclusion is not None:
        c = materials.inclusion
        interface = abs(np.hypot(x - c.center[0], y - c.center[1]) - c.radius)
    return free, interface


def choose_radius(mesh: QuadMesh, crack: CrackPolyline, tip: int, materials: MaterialField,
                  factor: float = 3.0) -> float:
    """Domain radius ``factor * h``, shrunk to 2h near a boundary or the inclusion.

    The ring of contributing elements reaches about one element diagonal
    beyond the radius.  A free boundary (plate edge or hole) inside the
    2h domain is an error; an inclusion interface only triggers a warning.
    """
    tip_xy = crack.tip_point(tip)
    ring = np.sqrt(2.0) * max(mesh.hx, mesh.hy)
    free, interface = _clearance(mesh, tip_xy, materials)
    r = factor * mesh.h
    if free > r + ring and interface > r + ring:
        return r
    r = 2.0 * mesh.h
    if free <= r + ring:
        raise DomainTooSmall(f"interaction-integral domain around tip {tip} is clipped by a free boundary even at 2h")
    log.warning("tip %d at (%.4f, %.4f): interaction domain shrunk to 2h", tip, tip_xy[0], tip_xy[1])
    if interface <= r + ring:
        log.warning("tip %d: interaction domain still crosses the inclusion interface", tip)
    return r


def interaction_integral_sif(U: np.ndarray, mesh: QuadMesh, crack: CrackPolyline, tip: int, materials: MaterialField,
                             dofmap: DofMap, radius: float | None = None) -> SifPair:
    """Mixed-mode SIFs from the equivalent-domain interaction integral.

    ``U`` is indexed by global DofMap indices.  The weight function is 1 on
    nodes within ``radius`` of the tip and 0 elsewhere, so only the ring of
    elements straddling the circle contributes.
    """
    if radius is None:
        radius = choose_radius(mesh, crack, tip, materials)
    frame = crack.tip_frame(tip)
    tip_xy = frame.origin
    void = materials.void_elements(mesh)
    qn = (np.hypot(*(mesh.nodes - tip_xy).T) < radius).astype(float)
    qe = qn[mesh.elements]
    ring = np.flatnonzero((qe.max(axis=1) > 0) & (qe.min(axis=1) < 1) & ~void)
    if ring.size == 0:
        raise DomainTooSmall("no elements straddle the interaction-integral domain boundary")

    E_tip = float(materials.E_at(tip_xy[None, :])[0])
    nu = materials.nu
    mu = E_tip / (2 * (1 + nu))
    kappa = 3 - 4 * nu
    Ep = E_tip / (1 - nu ** 2)
    Dn = Material(1.0, nu).D()
    R = np.vstack([frame.tangent, frame.normal])  # rows: local axes

    I = np.zeros(2)
    for e in ring:
        ker = element_kernel(mesh, int(e), dofmap.classes.get(int(e)), crack, dofmap, materials)
        ue = U[ker.dofs]
        eps = ker.B @ ue  # (m, 3) global
        sig = (ker.E[:, None] * eps) @ Dn.T
        # full displacement gradient from the B operator columns
        gx = ker.B[:, 0, 0::2] @ ue[0::2], ker.B[:, 2, 0::2] @ ue[0::2]
        gy = ker.B[:, 2, 1::2] @ ue[1::2], ker.B[:, 1, 1::2] @ ue[1::2]
        Gu = np.stack([np.stack(gx, -1), np.stack(gy, -1)], axis=1)  # (m, i, j)
        Gl = np.einsum("ai,mij,bj->mab", R, Gu, R)
        S = np.empty((sig.shape[0], 2, 2))
        S[:, 0, 0], S[:, 1, 1] = sig[:, 0], sig[:, 1]
        S[:, 0, 1] = S[:, 1, 0] = sig[:, 2]
        Sl = np.einsum("ai,mij,bj->mab", R, S, R)
        epl = 0.5 * (Gl + np.transpose(Gl, (0, 2, 1)))

        x0, y0, x1, y1 = mesh.element_bounds(int(e))
        xi = np.column_stack([2 * (ker.points[:, 0] - x0) / (x1 - x0) - 1, 2 * (ker.points[:, 1] - y0) / (y1 - y0) - 1])
        _, dN = shape_functions_batch(xi)
        dq = np.einsum("a,mai->mi", qe[e], dN) * np.array([2 / (x1 - x0), 2 / (y1 - y0)])
        dql = dq @ R.T

        r, th = tip_polar_batch(ker.points, frame)
        sa, ga = williams_fields(r, th, mu, kappa)
        for mode in range(2):
            Sa = np.empty_like(Sl)
            Sa[:, 0, 0], Sa[:, 1, 1] = sa[mode, :, 0], sa[mode, :, 1]
            Sa[:, 0, 1] = Sa[:, 1, 0] = sa[mode, :, 2]
            W = np.einsum("mij,mij->m", Sa, epl)
            # sigma_ij u^aux_i,1 + sigma^aux_ij u_i,1 - W delta_1j, contracted with q,j
            t1 = np.einsum("mij,mi,mj->m", Sl, ga[mode][:, :, 0], dql)
            t2 = np.einsum("mij,mi,mj->m", Sa, Gl[:, :, 0], dql)
            t3 = W * dql[:, 0]
            I[mode] += np.sum((t1 + t2 - t3) * ker.weights)
    K = 0.5 * Ep * I
    return SifPair(K_I=float(K[0]), K_II=float(K[1]), tip=tip, radius=float(radius))


def propagation_angle(K_I, K_II=None) -> float:
    """Kink angle of maximum hoop stress, in the tip frame (radians).

    Accepts a SifPair or two numbers.  Positive K_II turns the crack to
    negative angles.
    """
    if K_II is None:
        K_I, K_II = K_I.K_I, K_I.K_II
    eps = EPS_K * max(1.0, abs(K_I) + abs(K_II))
    if abs(K_I) < eps and abs(K_II) < eps:
        raise NoDrivingForce(f"no driving force at the tip (K_I={K_I:g}, K_II={K_II:g})")
    if abs(K_II) < EPS_K * abs(K_I):
        return 0.0
    ratio = K_I / K_II
    return float(2.0 * np.arctan((ratio - np.sign(K_II) * np.sqrt(ratio ** 2 + 8.0)) / 4.0))


def advance_crack(crack: CrackPolyline, tip: int, theta: float, da: float, mesh: QuadMesh | None = None,
                  step: int | None = None, obstacle=None) -> CrackPolyline:
    """Grow ``tip`` by ``da`` at ``theta`` from its current tangent.

    Returns a new polyline.  A tip that would leave the mesh domain (or enter
    ``obstacle``, a callable on points) is deactivated instead.
    """
    if not np.isfinite(theta):
        raise ValueError("kink angle must be finite")
    if not da > 0:
        raise ValueError("growth increment must be positive")
    out = crack.copy()
    frame = crack.tip_frame(tip)
    c, s = np.cos(theta), np.sin(theta)
    t = frame.tangent
    d = np.array([c * t[0] - s * t[1], s * t[0] + c * t[1]])
    p = frame.origin + da * d
    if mesh is not None:
        p = nudge_point(p, d, mesh, da)
        inside = mesh.domain.contains(p) and not any(
            abs(v) < 1e-9 for v in (p[0] - mesh.domain.x0, mesh.domain.x1 - p[0], p[1] - mesh.domain.y0, mesh.domain.y1 - p[1])
        )
        if not inside:
            log.info("tip %d left the domain at step %s; deactivated", tip, step)
            out.deactivate(tip)
            return out
    if obstacle is not None and obstacle(p):
        log.info("tip %d entered a hole at step %s; deactivated", tip, step)
        out.deactivate(tip)
        return out
    out.grow(tip, p, step)
    return out


def nudge_point(p, d, mesh: QuadMesh, da: float) -> np.ndarray:
    q = nudge_off_edges(p, d, mesh, da)
    # a tip moving parallel to a mesh line cannot leave it by sliding along it
    q = nudge_off_edges(q, np.array([-d[1], d[0]]), mesh, da)
    return q
