"""Scenario files, result files and the command-line interface."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace

import numpy as np
import yaml

from .assembly import Circle, EdgeTraction, Material
from .mesh import Rectangle
from .sim import MODES, PointLoad, RunConfig, RunResult, Scenario, SimulationError, Support, benchmark_scaling, run

log = logging.getLogger(__name__)

EDGES = ("bottom", "right", "top", "left")

PATH_HEADER = ["step", "tip", "x", "y"]
ERROR_HEADER = ["step", "E_u_percent", "E_sigma_percent"]
TIMING_HEADER = [
    "step", "classify", "enrich", "assembly_local", "assembly_global", "solve_full", "solve_dur", "sif",
    "postprocess", "n", "N", "eta_percent", "rebased",
]
SCALING_HEADER = ["phase", "dofs_target", "dofs", "baseline_seconds", "reanalysis_seconds"]


class ScenarioError(ValueError):
    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        name = f"{field}: " if field else ""
        super().__init__(f"{name}{message}{where}")
        self.field = field
        self.line = line


# ---------------------------------------------------------------------------
# strict schema walk over the composed YAML tree
# ---------------------------------------------------------------------------

_POINT = ("point", None)
_SCHEMA = {
    "name": str,
    "domain": {"x0": float, "y0": float, "x1": float, "y1": float},
    "mesh": {"nx": int, "ny": int},
    "material": {"E": float, "nu": float},
    "hole": {"center": _POINT, "radius": float},
    "inclusion": {"center": _POINT, "radius": float, "E": float},
    "crack": {"type": str, "vertices": [_POINT]},
    "loads": [{"type": str, "at": _POINT, "force": _POINT, "edge": str, "value": _POINT}],
    "supports": [{"edge": str, "fix": str}],
    "run": {"da": float, "max_steps": int, "mode": str, "threshold": float},
}
_REQUIRED = {
    "": ("domain", "mesh", "material", "crack", "loads", "supports"),
    "domain": ("x0", "y0", "x1", "y1"),
    "mesh": ("nx", "ny"),
    "material": ("E", "nu"),
    "hole": ("center", "radius"),
    "inclusion": ("center", "radius", "E"),
    "crack": ("vertices",),
    "supports[]": ("edge",),
    "loads[]": ("type",),
}


def _line(node) -> int:
    return node.start_mark.line + 1


def _scalar(node, kind, path):
    if not isinstance(node, yaml.ScalarNode):
        raise ScenarioError("expected a scalar", path, _line(node))
    value = yaml.safe_load(node.value) if node.tag != "tag:yaml.org,2002:str" or kind is not str else node.value
    if kind is str:
        return str(node.value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ScenarioError(f"expected an integer, got {node.value!r}", path, _line(node))
        return int(value)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        try:
            value = float(node.value)
        except ValueError:
            raise ScenarioError(f"expected a number, got {node.value!r}", path, _line(node)) from None
    return float(value)


def _walk(node, schema, path):
    if schema == _POINT:
        if not isinstance(node, yaml.SequenceNode) or len(node.value) != 2:
            raise ScenarioError("expected a pair [x, y]", path, _line(node))
        return tuple(_scalar(v, float, f"{path}[{i}]") for i, v in enumerate(node.value))
    if isinstance(schema, list):
        if not isinstance(node, yaml.SequenceNode):
            raise ScenarioError("expected a list", path, _line(node))
        return [_walk(v, schema[0], f"{path}[{i}]") for i, v in enumerate(node.value)]
    if isinstance(schema, dict):
        if not isinstance(node, yaml.MappingNode):
            raise ScenarioError("expected a mapping", path or "<root>", _line(node))
        out = {}
        for k, v in node.value:
            key = k.value
            sub = f"{path}.{key}" if path else key
            if key not in schema:
                raise ScenarioError(f"unknown key {key!r}", sub, _line(k))
            if key in out:
                raise ScenarioError("duplicate key", sub, _line(k))
            out[key] = (_walk(v, schema[key], sub), _line(k))
        req_key = path.split("[")[0] + ("[]" if path.endswith("]") else "")
        for r in _REQUIRED.get(req_key, ()):
            if r not in out:
                raise ScenarioError("missing required key", f"{path}.{r}" if path else r, _line(node))
        return {k: v for k, (v, _) in out.items()} | {"__lines__": {k: ln for k, (_, ln) in out.items()}}
    return _scalar(node, schema, path)


def _loads_text(text: str, source: str):
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(f"malformed scenario file {source}: {exc}", None, mark.line + 1 if mark else None) from None
    if root is None:
        raise ScenarioError(f"empty scenario file {source}")
    return _walk(root, _SCHEMA, "")


def _config_from_tree(t: dict, source: str) -> RunConfig:
    lines = t["__lines__"]

    def fail(msg, key, sub=None):
        raise ScenarioError(msg, key if sub is None else f"{key}.{sub}", lines.get(key))

    d = t["domain"]
    domain = Rectangle(d["x0"], d["y0"], d["x1"], d["y1"])
    if not (domain.width > 0 and domain.height > 0):
        fail("domain must have positive width and height", "domain")
    nx, ny = t["mesh"]["nx"], t["mesh"]["ny"]
    if nx < 1 or ny < 1:
        fail("element counts must be positive", "mesh")
    m = t["material"]
    try:
        material = Material(m["E"], m["nu"])
    except ValueError as exc:
        fail(str(exc), "material", "nu" if not 0 <= m["nu"] < 0.5 else "E")

    def inside(p):
        return domain.contains(p)

    hole = None
    if "hole" in t:
        h = t["hole"]
        if h["radius"] <= 0:
            fail("radius must be positive", "hole", "radius")
        if not inside(h["center"]):
            fail("hole centre lies outside the domain", "hole", "center")
        hole = Circle(tuple(h["center"]), h["radius"])
    inclusion, inc_E = None, None
    if "inclusion" in t:
        c = t["inclusion"]
        if c["radius"] <= 0:
            fail("radius must be positive", "inclusion", "radius")
        if c["E"] <= 0:
            fail("modulus must be positive", "inclusion", "E")
        if not inside(c["center"]):
            fail("inclusion centre lies outside the domain", "inclusion", "center")
        inclusion, inc_E = Circle(tuple(c["center"]), c["radius"]), c["E"]

    cr = t["crack"]
    ctype = cr.get("type", "edge")
    if ctype not in ("edge", "center"):
        fail("crack type must be 'edge' or 'center'", "crack", "type")
    verts = tuple(tuple(v) for v in cr["vertices"])
    if len(verts) < 2:
        fail("a crack needs at least two vertices", "crack", "vertices")
    for v in verts:
        if not inside(v):
            fail(f"crack vertex {v} lies outside the domain", "crack", "vertices")

    point_loads, tractions = [], []
    for i, ld in enumerate(t["loads"]):
        kind = ld["type"]
        if kind == "point":
            if "at" not in ld or "force" not in ld:
                fail("point loads need 'at' and 'force'", "loads", f"[{i}]")
            if not inside(ld["at"]):
                fail("load point lies outside the domain", "loads", f"[{i}].at")
            point_loads.append(PointLoad(tuple(ld["at"]), tuple(ld["force"])))
        elif kind == "traction":
            if ld.get("edge") not in EDGES or "value" not in ld:
                fail(f"tractions need 'edge' in {EDGES} and 'value'", "loads", f"[{i}]")
            tractions.append(EdgeTraction(ld["edge"], tuple(ld["value"])))
        else:
            fail(f"unknown load type {kind!r}", "loads", f"[{i}].type")
    if not point_loads and not tractions:
        fail("at least one load is required", "loads")

    supports = []
    for i, s in enumerate(t["supports"]):
        if s["edge"] not in EDGES:
            fail(f"unknown edge {s['edge']!r}", "supports", f"[{i}].edge")
        fix = s.get("fix", "xy")
        if fix not in ("x", "y", "xy"):
            fail("fix must be x, y or xy", "supports", f"[{i}].fix")
        supports.append(Support(s["edge"], fix))
    if not supports:
        fail("at least one support is required", "supports")

    sc = Scenario(
        name=t.get("name", os.path.splitext(os.path.basename(source))[0]),
        domain=domain, nx=nx, ny=ny, material=material, crack=verts, crack_type=ctype,
        hole=hole, inclusion=inclusion, inclusion_E=inc_E,
        point_loads=tuple(point_loads), tractions=tuple(tractions), supports=tuple(supports),
    )
    r = t.get("run", {})
    try:
        return RunConfig(sc, da=r.get("da", 1.0), max_steps=r.get("max_steps", 10), mode=r.get("mode", "both"),
                         threshold=r.get("threshold", 5.0))
    except ValueError as exc:
        fail(str(exc), "run")


def parse_scenario_text(text: str, source: str = "<string>") -> RunConfig:
    return _config_from_tree(_loads_text(text, source), source)


def parse_scenario(path) -> RunConfig:
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise ScenarioError(f"scenario file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return parse_scenario_text(fh.read(), path)


def serialize_scenario(cfg: RunConfig) -> str:
    sc = cfg.scenario
    d = sc.domain
    doc = {
        "name": sc.name,
        "domain": {"x0": d.x0, "y0": d.y0, "x1": d.x1, "y1": d.y1},
        "mesh": {"nx": sc.nx, "ny": sc.ny},
        "material": {"E": sc.material.E, "nu": sc.material.nu},
    }
    if sc.hole is not None:
        doc["hole"] = {"center": list(sc.hole.center), "radius": sc.hole.radius}
    if sc.inclusion is not None:
        doc["inclusion"] = {"center": list(sc.inclusion.center), "radius": sc.inclusion.radius, "E": sc.inclusion_E}
    doc["crack"] = {"type": sc.crack_type, "vertices": [list(v) for v in sc.crack]}
    loads = [{"type": "point", "at": list(p.point), "force": list(p.force)} for p in sc.point_loads]
    loads += [{"type": "traction", "edge": t.edge, "value": list(t.traction)} for t in sc.tractions]
    doc["loads"] = loads
    doc["supports"] = [{"edge": s.edge, "fix": s.components} for s in sc.supports]
    doc["run"] = {"da": cfg.da, "max_steps": cfg.max_steps, "mode": cfg.mode, "threshold": cfg.threshold}
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None)


# ---------------------------------------------------------------------------
# result files
# ---------------------------------------------------------------------------


def _writer(path):
    fh = open(path, "w", newline="", encoding="utf-8")
    return fh, csv.writer(fh, lineterminator="\n")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_path_csv(result: RunResult, path) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(PATH_HEADER)
        for r in result.reports:
            for tip in sorted(r.tips):
                x, y = r.tips[tip]
                w.writerow([r.step, tip, _fmt(x), _fmt(y)])


def write_errors_csv(result: RunResult, path) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(ERROR_HEADER)
        for r in result.reports:
            w.writerow([r.step, _fmt(r.E_u), _fmt(r.E_sigma)])


def write_timing_csv(result: RunResult, path) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(TIMING_HEADER)
        for r in result.reports:
            t = r.timings
            w.writerow([r.step] + [_fmt(t.get(k)) for k in TIMING_HEADER[1:9]] + [r.n, r.N, _fmt(r.eta), int(r.rebased)])


def write_scaling_csv(rows, path) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(SCALING_HEADER)
        for r in rows:
            w.writerow(["solve", r.target, r.dofs, _fmt(r.full_solve), _fmt(r.dur_solve)])
        for r in rows:
            w.writerow(["stiffness_update", r.target, r.dofs, _fmt(r.global_assembly), _fmt(r.local_assembly)])


def write_vtk(path, mesh, void, displacement, von_mises, title="xfemdur step") -> None:
    """Legacy ASCII unstructured grid with quad cells and nodal fields."""
    cells = mesh.elements[~void]
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {mesh.n_nodes} double")
    lines += [f"{x!r} {y!r} 0.0" for x, y in mesh.nodes]
    lines.append(f"CELLS {len(cells)} {5 * len(cells)}")
    lines += [f"4 {a} {b} {c} {d}" for a, b, c, d in cells]
    lines.append(f"CELL_TYPES {len(cells)}")
    lines += ["9"] * len(cells)
    lines.append(f"POINT_DATA {mesh.n_nodes}")
    lines.append("VECTORS displacement double")
    lines += [f"{u!r} {v!r} 0.0" for u, v in displacement]
    for name, vals in (("displacement_magnitude", np.hypot(displacement[:, 0], displacement[:, 1])),
                       ("von_mises", von_mises)):
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines += [repr(float(v)) for v in vals]
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_run(result: RunResult, out_dir) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    files = []
    for name, fn in (("path.csv", write_path_csv), ("errors.csv", write_errors_csv), ("timing.csv", write_timing_csv)):
        p = os.path.join(out_dir, name)
        fn(result, p)
        files.append(p)
    for snap in result.snapshots:
        p = os.path.join(out_dir, f"step_{snap.step}.vtk")
        write_vtk(p, result.mesh, result.void, snap.displacement, snap.von_mises, f"step {snap.step}")
        files.append(p)
    return files


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

EXIT_SCENARIO = 3
EXIT_SIMULATION = 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xfemdur", description="2D XFEM crack propagation with reanalysis")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a propagation scenario")
    r.add_argument("--config", required=True)
    r.add_argument("--mode", choices=MODES)
    r.add_argument("--out", required=True)
    r.add_argument("--steps", type=int, help="override max_steps")
    b = sub.add_parser("bench", help="solve / stiffness-update cost versus DOF count")
    b.add_argument("--config", required=True)
    b.add_argument("--dofs", required=True, help="comma-separated DOF targets, e.g. 1000,10000,100000")
    b.add_argument("--out", required=True)
    b.add_argument("--steps", type=int, default=5)
    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("--config", required=True)
    return p


def cli(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_scenario(args.config)
        if args.command == "validate":
            print(f"{args.config}: ok")
            return 0
        if args.command == "run":
            if args.mode:
                cfg = replace(cfg, mode=args.mode)
            if args.steps:
                cfg = replace(cfg, max_steps=args.steps)
            result = run(cfg)
            files = write_run(result, args.out)
            print(f"wrote {len(files)} files to {args.out}")
            return 0
        targets = [int(float(x)) for x in args.dofs.split(",") if x.strip()]
        rows = benchmark_scaling(cfg.scenario, targets, steps=args.steps, da=cfg.da, threshold=cfg.threshold)
        os.makedirs(args.out, exist_ok=True)
        write_scaling_csv(rows, os.path.join(args.out, "scaling.csv"))
        print(f"wrote {os.path.join(args.out, 'scaling.csv')}")
        return 0
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except SimulationError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_SCENARIO


def main() -> None:
    sys.exit(cli())
