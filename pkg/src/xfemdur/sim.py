"""Quasi-static crack propagation driver."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .assembly import (
    Assembler,
    BoundaryConditions,
    Circle,
    EdgeTraction,
    Material,
    MaterialField,
    NodalLoad,
    element_kernel,
    edge_nodes,
)
from .crack import CrackPolyline, classify_elements
from .enrichment import DofMap, update_dof_map
from .fracture import DomainTooSmall, NoDrivingForce, advance_crack, interaction_integral_sif, propagation_angle
from .mesh import QuadMesh, Rectangle, build_mesh, gauss_rule, shape_functions_batch
from .solver import DURSolver, SolverCounters, direct_solve

log = logging.getLogger(__name__)

MODES = ("full", "dur", "both")


class SimulationError(RuntimeError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"step {step}: {cause}")
        self.step = step
        self.cause = cause


class UndefinedMetric(ValueError):
    pass


@dataclass(frozen=True)
class PointLoad:
    point: tuple
    force: tuple


@dataclass(frozen=True)
class Support:
    edge: str
    components: str = "xy"


@dataclass(frozen=True)
class Scenario:
    name: str
    domain: Rectangle
    nx: int
    ny: int
    material: Material
    crack: tuple  # vertices
    crack_type: str = "edge"  # edge (tip at the last vertex) or center (both tips)
    hole: Circle | None = None
    inclusion: Circle | None = None
    inclusion_E: float | None = None
    point_loads: tuple = ()
    tractions: tuple = ()  # EdgeTraction
    supports: tuple = ()  # Support


@dataclass(frozen=True)
class RunConfig:
    scenario: Scenario
    da: float = 1.0
    max_steps: int = 10
    mode: str = "both"
    threshold: float = 5.0
    out_dir: str | None = None

    def __post_init__(self):
        if not self.da > 0:
            raise ValueError("da must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not 0 < self.threshold <= 100:
            raise ValueError("threshold must lie in (0, 100]")


@dataclass
class StepReport:
    step: int
    tips: dict  # tip id -> (x, y) of the configuration solved at this step
    sifs: dict = field(default_factory=dict)  # tip id -> (K_I, K_II)
    angles: dict = field(default_factory=dict)
    n: int = 0
    N: int = 0
    eta: float = 0.0
    rebased: bool = False
    timings: dict = field(default_factory=dict)
    E_u: float | None = None
    E_sigma: float | None = None
    assembly_diff: float | None = None
    kuu_identical: bool | None = None
    elements_reintegrated: int = 0

    def __post_init__(self):
        if self.N and abs(self.eta - 100.0 * self.n / self.N) > 1e-9:
            raise ValueError("eta inconsistent with n/N")


@dataclass
class Snapshot:
    step: int
    displacement: np.ndarray  # (n_nodes, 2)
    von_mises: np.ndarray  # (n_nodes,)
    crack: list


@dataclass
class RunResult:
    config: RunConfig
    mesh: QuadMesh
    void: np.ndarray
    reports: list
    snapshots: list
    solutions: dict = field(default_factory=dict)  # mode -> list of global U per step
    counters: SolverCounters | None = None
    full_counters: SolverCounters | None = None
    events: list = field(default_factory=list)
    baseline: object = None  # final DUR baseline (factor of the last rebase)


# ---------------------------------------------------------------------------
# setup helpers
# ---------------------------------------------------------------------------


def material_field(sc: Scenario) -> MaterialField:
    return MaterialField(base=sc.material, inclusion=sc.inclusion, inclusion_E=sc.inclusion_E, hole=sc.hole)


def nearest_node(mesh: QuadMesh, p, allowed: np.ndarray | None = None) -> int:
    d = np.hypot(mesh.nodes[:, 0] - p[0], mesh.nodes[:, 1] - p[1])
    if allowed is not None:
        d = np.where(allowed, d, np.inf)
    return int(np.argmin(d))


def boundary_conditions(mesh: QuadMesh, sc: Scenario) -> BoundaryConditions:
    fixed = {}
    for sup in sc.supports:
        for n in edge_nodes(mesh, sup.edge):
            if "x" in sup.components:
                fixed[int(2 * n)] = 0.0
            if "y" in sup.components:
                fixed[int(2 * n + 1)] = 0.0
    nodal = [NodalLoad(nearest_node(mesh, pl.point), tuple(pl.force)) for pl in sc.point_loads]
    return BoundaryConditions(fixed=fixed, nodal=nodal, tractions=list(sc.tractions))


def initial_crack(sc: Scenario) -> CrackPolyline:
    if sc.crack_type == "center":
        return CrackPolyline.center([list(v) for v in sc.crack])
    return CrackPolyline.edge([list(v) for v in sc.crack])


def scaled_resolution(sc: Scenario, target_dofs: int) -> tuple[int, int]:
    """Element counts with the scenario's aspect ratio giving about ``target_dofs`` standard DOFs."""
    aspect = sc.ny / sc.nx
    nx = max(2, int(round((np.sqrt(target_dofs / 2.0 / aspect)) - 1)))
    ny = max(2, int(round(aspect * (nx + 1) - 1)))
    # keep the initial crack off mesh lines
    for _ in range(20):
        m = build_mesh(sc.domain, nx, ny)
        if not _on_lines(m, sc.crack):
            break
        nx += 1
        ny = max(2, int(round(aspect * (nx + 1) - 1)))
    return nx, ny


def _on_lines(mesh: QuadMesh, vertices) -> bool:
    for x, y in vertices:
        fx = (x - mesh.domain.x0) / mesh.hx
        fy = (y - mesh.domain.y0) / mesh.hy
        inner_x = mesh.domain.x0 < x < mesh.domain.x1
        if (inner_x and abs(fx - round(fx)) < 1e-3) or abs(fy - round(fy)) < 1e-3:
            return True
    return False


# ---------------------------------------------------------------------------
# post-processing
# ---------------------------------------------------------------------------


def von_mises(sxx, syy, sxy, nu: float) -> np.ndarray:
    """Plane-strain Von Mises stress (szz = nu (sxx + syy))."""
    szz = nu * (sxx + syy)
    return np.sqrt(0.5 * ((sxx - syy) ** 2 + (syy - szz) ** 2 + (szz - sxx) ** 2) + 3.0 * sxy ** 2)


_CORNERS = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)


def _fit_matrix(xi: np.ndarray) -> np.ndarray:
    """Least-squares map from point values to corner values of a bilinear fit."""
    A = np.column_stack([np.ones(len(xi)), xi[:, 0], xi[:, 1], xi[:, 0] * xi[:, 1]])
    C = np.column_stack([np.ones(4), _CORNERS[:, 0], _CORNERS[:, 1], _CORNERS[:, 0] * _CORNERS[:, 1]])
    return C @ np.linalg.pinv(A)


def nodal_von_mises(mesh: QuadMesh, crack: CrackPolyline, dofmap: DofMap, materials: MaterialField,
                    U: np.ndarray, void: np.ndarray) -> np.ndarray:
    """Von Mises stress at quadrature points fitted per element and averaged at nodes."""
    nu = materials.nu
    D = Material(1.0, nu).D()
    enriched = set(dofmap.classes)
    for n in dofmap.node_state:
        enriched.update(int(e) for e in mesh.node_elements()[n])
    rule = gauss_rule(2)
    N, dN = shape_functions_batch(rule.points)
    G = dN @ np.diag([2.0 / mesh.hx, 2.0 / mesh.hy])
    conn = mesh.elements
    ux, uy = U[2 * conn], U[2 * conn + 1]  # (ne, 4)
    exx = np.einsum("qa,ea->eq", G[:, :, 0], ux)
    eyy = np.einsum("qa,ea->eq", G[:, :, 1], uy)
    gxy = np.einsum("qa,ea->eq", G[:, :, 1], ux) + np.einsum("qa,ea->eq", G[:, :, 0], uy)
    qp = np.einsum("qa,eai->eqi", N, mesh.nodes[conn])
    E = materials.E_at(qp.reshape(-1, 2)).reshape(-1, 4)
    s = E[..., None] * (np.stack([exx, eyy, gxy], -1) @ D.T)
    vm_q = von_mises(s[..., 0], s[..., 1], s[..., 2], nu)
    corner = vm_q @ _fit_matrix(rule.points).T  # (ne, 4)

    for e in sorted(enriched):
        if void[e]:
            continue
        ker = element_kernel(mesh, e, dofmap.classes.get(e), crack, dofmap, materials)
        eps = ker.B @ U[ker.dofs]
        se = (ker.E[:, None] * eps) @ D.T
        vm = von_mises(se[:, 0], se[:, 1], se[:, 2], nu)
        x0, y0, x1, y1 = mesh.element_bounds(e)
        xi = np.column_stack([2 * (ker.points[:, 0] - x0) / (x1 - x0) - 1, 2 * (ker.points[:, 1] - y0) / (y1 - y0) - 1])
        corner[e] = _fit_matrix(xi) @ vm

    # extrapolation overshoots next to the tip; the stress measure is a norm
    np.maximum(corner, 0.0, out=corner)
    live = ~void
    acc = np.zeros(mesh.n_nodes)
    cnt = np.zeros(mesh.n_nodes)
    np.add.at(acc, conn[live].ravel(), corner[live].ravel())
    np.add.at(cnt, conn[live].ravel(), 1.0)
    return np.divide(acc, cnt, out=np.zeros_like(acc), where=cnt > 0)


def error_metrics(u_dur, u_full, s_dur, s_full) -> tuple[float, float]:
    """Relative L2 differences in percent for displacements and Von Mises stress."""
    u_dur, u_full = np.ravel(u_dur), np.ravel(u_full)
    s_dur, s_full = np.ravel(s_dur), np.ravel(s_full)
    du, ds = np.linalg.norm(u_full), np.linalg.norm(s_full)
    if du == 0.0 or ds == 0.0:
        raise UndefinedMetric("reference field has zero norm")
    return 100.0 * np.linalg.norm(u_dur - u_full) / du, 100.0 * np.linalg.norm(s_dur - s_full) / ds


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def _global(U_sys: np.ndarray, blk, dofmap: DofMap, assembler: Assembler) -> np.ndarray:
    U = np.zeros(dofmap.size)
    U[blk.dofs] = U_sys
    lay = assembler.layout
    U[lay.fixed] = lay.fixed_values
    return U


def run(config: RunConfig, keep_solutions: bool = False, snapshots: bool = True,
        straight_if_unresolved: bool = False) -> RunResult:
    """Propagate the crack for up to ``max_steps`` solves.

    Step 0 is solved by a full factorization which also becomes the DUR
    baseline.  In ``both`` mode the path follows the full-analysis SIFs and
    the DUR solution is compared against it on the same geometry.
    ``straight_if_unresolved`` keeps a tip growing straight when the mesh is
    too coarse for the SIF domain (used by cost benchmarks only).
    """
    sc = config.scenario
    mesh = build_mesh(sc.domain, sc.nx, sc.ny)
    materials = material_field(sc)
    bcs = boundary_conditions(mesh, sc)
    assembler = Assembler(mesh, materials, bcs)
    void = assembler.layout.void
    crack = initial_crack(sc)
    dofmap = DofMap(mesh.n_nodes)
    counters = SolverCounters()
    dur = DURSolver(threshold=config.threshold, counters=counters) if config.mode in ("dur", "both") else None
    full_counters = SolverCounters()

    def obstacle(p):
        if materials.hole is not None and materials.hole.inside(p)[0]:
            return True
        return bool(void[mesh.locate(p)])

    result = RunResult(config=config, mesh=mesh, void=void, reports=[], snapshots=[], counters=counters)
    prev_blk = None
    for step in range(config.max_steps):
        try:
            timings = {}
            t0 = time.perf_counter()
            classes = {e: c for e, c in classify_elements(mesh, crack).items() if not void[e]}
            timings["classify"] = time.perf_counter() - t0

            t0 = time.perf_counter()
            dofmap, _ = update_dof_map(dofmap, classes, crack, mesh)
            timings["enrich"] = time.perf_counter() - t0

            blk = F = blk_full = F_full = None
            changed = set()
            if config.mode in ("dur", "both"):
                t0 = time.perf_counter()
                blk, F, changed = assembler.assemble_delta(prev_blk, crack, dofmap)
                timings["assembly_local"] = time.perf_counter() - t0
            if config.mode in ("full", "both"):
                t0 = time.perf_counter()
                blk_full, F_full = assembler.assemble_full(crack, dofmap)
                timings["assembly_global"] = time.perf_counter() - t0

            rep = StepReport(step=step, tips={t: tuple(map(float, crack.tip_point(t))) for t in crack.active_tips()})
            rep.elements_reintegrated = assembler.integrated_last
            if blk is not None and blk_full is not None:
                d = abs(blk.K - blk_full.K)
                rep.assembly_diff = float(d.max() / abs(blk_full.K).max()) if d.nnz else 0.0
                ns = blk.n_standard
                a, b = blk.K[:ns, :ns], blk_full.K[:ns, :ns]
                rep.kuu_identical = bool(ns == blk_full.n_standard and (a != b).nnz == 0)

            sols = {}
            if blk_full is not None:
                t0 = time.perf_counter()
                U, _ = direct_solve(blk_full.K, F_full, full_counters)
                timings["solve_full"] = time.perf_counter() - t0
                sols["full"] = _global(U, blk_full, dofmap, assembler)
            if blk is not None:
                t0 = time.perf_counter()
                Ud, part, rebased = dur.solve(blk.K, F, step, structural_changed=changed)
                timings["solve_dur"] = time.perf_counter() - t0
                sols["dur"] = _global(Ud, blk, dofmap, assembler)
                rep.n, rep.N, rep.eta, rep.rebased = part.n, part.N, part.eta, rebased
            else:
                rep.N = blk_full.size

            drive = sols["full"] if "full" in sols else sols["dur"]
            t0 = time.perf_counter()
            if config.mode == "both" or snapshots:
                vm = {k: nodal_von_mises(mesh, crack, dofmap, materials, u, void) for k, u in sols.items()}
            timings["postprocess"] = time.perf_counter() - t0
            if config.mode == "both":
                nodal = slice(0, 2 * mesh.n_nodes)
                rep.E_u, rep.E_sigma = error_metrics(sols["dur"][nodal], sols["full"][nodal], vm["dur"], vm["full"])
            if snapshots:
                key = "full" if "full" in sols else "dur"
                result.snapshots.append(Snapshot(step, drive[: 2 * mesh.n_nodes].reshape(-1, 2).copy(), vm[key],
                                                 [tuple(map(float, v)) for v in crack.vertices]))
            if keep_solutions:
                for k, u in sols.items():
                    result.solutions.setdefault(k, []).append(u)

            t0 = time.perf_counter()
            new_crack = crack
            for tip in crack.active_tips():
                try:
                    sif = interaction_integral_sif(drive, mesh, crack, tip, materials, dofmap)
                    theta = propagation_angle(sif)
                except DomainTooSmall as exc:
                    if not straight_if_unresolved:
                        log.warning("step %d tip %d: %s; tip deactivated", step, tip, exc)
                        new_crack = new_crack.copy()
                        new_crack.deactivate(tip)
                        continue
                    theta = 0.0
                    if step + 1 < config.max_steps:
                        new_crack = advance_crack(new_crack, tip, theta, config.da, mesh, step + 1, obstacle)
                    continue
                except NoDrivingForce as exc:
                    log.warning("step %d tip %d: %s; tip deactivated", step, tip, exc)
                    new_crack = new_crack.copy()
                    new_crack.deactivate(tip)
                    continue
                rep.sifs[tip] = (sif.K_I, sif.K_II)
                rep.angles[tip] = theta
                if step + 1 < config.max_steps:
                    new_crack = advance_crack(new_crack, tip, theta, config.da, mesh, step + 1, obstacle)
            timings["sif"] = time.perf_counter() - t0
            rep.timings = timings
            result.reports.append(rep)
            prev_blk = blk
            crack = new_crack
            if not crack.active_tips():
                log.info("no active tips after step %d; stopping", step)
                break
        except SimulationError:
            raise
        except Exception as exc:
            raise SimulationError(step, exc) from exc
    if dur is not None:
        result.events = list(dur.events)
        result.baseline = dur.baseline
    result.full_counters = full_counters
    return result


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------


@dataclass
class ScalingRow:
    target: int
    dofs: int
    full_solve: float
    dur_solve: float
    global_assembly: float
    local_assembly: float


def benchmark_scaling(scenario: Scenario, dof_targets, steps: int = 5, da: float = 1.0,
                      threshold: float = 5.0) -> list[ScalingRow]:
    """Per-step solve and stiffness-update costs at several resolutions.

    Step 0 (baseline factorization) and step 1 (numba warm-up of the DUR
    path) are excluded; each figure is the median over the remaining steps.
    """
    rows = []
    for target in dof_targets:
        nx, ny = scaled_resolution(scenario, int(target))
        sc = replace(scenario, nx=nx, ny=ny)
        res = run(RunConfig(sc, da=da, max_steps=steps, mode="both", threshold=threshold), snapshots=False,
                  straight_if_unresolved=True)
        reps = res.reports[2:] or res.reports[1:] or res.reports

        def med(key):
            return float(np.median([r.timings.get(key, np.nan) for r in reps]))

        rows.append(ScalingRow(int(target), int(res.reports[-1].N), med("solve_full"), med("solve_dur"),
                               med("assembly_global"), med("assembly_local")))
        log.info("benchmark %s: %s", target, rows[-1])
    return rows
