"""Loading and validating project files (YAML).

A project file describes the construction phases as 2D polygons plus the
camera, planning, cost and GA parameters. See ``README.md`` for the schema.
Unspecified numeric parameters take the planner's documented defaults.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from ..ga import GaParams
from ..scene import Polygon, Roi, SceneError, normalize_ccw
from ..sensing import CameraModel, NoiseModel, forward_camera_extrinsics
from ..spatial import Pose
from ..valuation import CostParams, Phase, PlanningParams, Project

SCHEMA = "tagplan-project/1"


class ProjectError(ValueError):
    """Schema or geometry error in a project file."""

    def __init__(self, field: str, message: str, line: int | None = None):
        self.field = field
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{field}: {message}")


@dataclass(frozen=True)
class LoadedProject:
    project: Project
    ga: GaParams
    content_hash: str
    source: str


def bundled(name: str) -> Path:
    """Path of a bundled example project (``unit3``, ``room``, ``large5``, ``tiny``)."""
    return Path(str(resources.files("tagplan") / "data" / f"{name}.yaml"))


def _node_line(root: yaml.Node | None, path: list) -> int | None:
    node = root
    line = node.start_mark.line + 1 if node is not None else None
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == key:
                    nxt = v
                    break
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            node = None
        if node is None:
            break
        line = node.start_mark.line + 1
    return line


class _Reader:
    def __init__(self, text: str):
        self.root = yaml.compose(text)

    def fail(self, path: list, message: str):
        name = "".join(f"[{p}]" if isinstance(p, int) else (f".{p}" if i else p) for i, p in enumerate(path))
        raise ProjectError(name or "<root>", message, _node_line(self.root, path))

    def mapping(self, value, path) -> dict:
        if value is None:
            return {}
        if not isinstance(value, dict):
            self.fail(path, "expected a mapping")
        return value

    def number(self, block: dict, key: str, path: list, default=None, positive=False, integer=False):
        if key not in block:
            if default is None:
                self.fail(path + [key], "required field is missing")
            return default
        v = block[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(path + [key], f"expected a number, got {v!r}")
        if integer and int(v) != v:
            self.fail(path + [key], f"expected an integer, got {v!r}")
        if positive and not v > 0:
            self.fail(path + [key], f"must be positive, got {v!r}")
        return int(v) if integer else float(v)

    def numbers(self, block: dict, key: str, path: list, default=None) -> tuple[float, ...]:
        if key not in block:
            if default is None:
                self.fail(path + [key], "required field is missing")
            return tuple(default)
        v = block[key]
        if not isinstance(v, list) or not v or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in v):
            self.fail(path + [key], "expected a non-empty list of numbers")
        return tuple(float(x) for x in v)

    def points(self, value, path: list) -> np.ndarray:
        if not isinstance(value, list) or len(value) < 3:
            self.fail(path, "expected a list of at least 3 [x, y] vertices")
        for i, p in enumerate(value):
            if not isinstance(p, list) or len(p) != 2 or any(
                isinstance(x, bool) or not isinstance(x, (int, float)) for x in p
            ):
                self.fail(path + [i], "vertex must be [x, y]")
        return np.array(value, dtype=float)


def _polygon(r: _Reader, value, path) -> tuple[Polygon, bool, int]:
    pts = r.points(value, path)
    try:
        verts, flipped = normalize_ccw(pts)
        return Polygon(verts), flipped, len(verts)
    except SceneError as exc:
        r.fail(path, str(exc))


def _camera(r: _Reader, block: dict, path: list) -> CameraModel:
    block = r.mapping(block, path)
    if "t_cv" in block:
        t = r.mapping(block["t_cv"], path + ["t_cv"])
        rot = np.asarray(t.get("rotation", np.eye(3).tolist()), dtype=float)
        trans = np.asarray(t.get("translation", [0, 0, 0]), dtype=float)
        if rot.shape != (3, 3) or trans.shape != (3,):
            r.fail(path + ["t_cv"], "rotation must be 3x3 and translation a 3-vector")
        t_cv = Pose(rot, trans)
        if not t_cv.is_valid(1e-6):
            r.fail(path + ["t_cv", "rotation"], "not a proper rotation matrix")
    else:
        offset = r.numbers(block, "forward_offset", path, default=(0.0, 0.0, 0.0))
        t_cv = forward_camera_extrinsics(offset)
    try:
        return CameraModel(
            fu=r.number(block, "fu", path, positive=True),
            fv=r.number(block, "fv", path, positive=True),
            cu=r.number(block, "cu", path),
            cv=r.number(block, "cv", path),
            width=r.number(block, "width", path, positive=True, integer=True),
            height=r.number(block, "height", path, positive=True, integer=True),
            dov=r.number(block, "dov", path, default=8.0, positive=True),
            t_cv=t_cv,
            sl_min=r.number(block, "sl_min", path, default=20.0),
            near_z=r.number(block, "near_z", path, default=0.01, positive=True),
            max_incidence_deg=block.get("max_incidence_deg"),
        )
    except ValueError as exc:
        if isinstance(exc, ProjectError):
            raise
        r.fail(path, str(exc))


def parse_project(text: str, source: str = "<string>") -> LoadedProject:
    try:
        doc = yaml.safe_load(text)
        r = _Reader(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ProjectError("<root>", f"invalid YAML: {exc}", mark.line + 1 if mark else None) from None
    doc = r.mapping(doc, [])
    schema = doc.get("schema", SCHEMA)
    if schema != SCHEMA:
        r.fail(["schema"], f"unsupported schema {schema!r}, expected {SCHEMA!r}")

    origin = doc.get("origin", [0.0, 0.0])
    if not isinstance(origin, list) or len(origin) != 2:
        r.fail(["origin"], "expected [x, y]")
    camera = _camera(r, doc.get("camera"), ["camera"])
    noise_block = r.mapping(doc.get("noise"), ["noise"])
    noise = NoiseModel(r.number(noise_block, "sigma_px", ["noise"], default=1.0, positive=True))

    pb = r.mapping(doc.get("planning"), ["planning"])
    P = ["planning"]
    try:
        planning = PlanningParams(
            cell_size=r.number(pb, "cell_size", P, default=0.5, positive=True),
            delta_theta=r.number(pb, "delta_theta", P, default=20.0, positive=True),
            d_res=r.number(pb, "d_res", P, default=0.3, positive=True),
            flight_altitudes=r.numbers(pb, "flight_altitudes", P, default=(1.5,)),
            install_heights=r.numbers(pb, "install_heights", P, default=(1.5,)),
            tag_sizes=r.numbers(pb, "tag_sizes", P, default=(0.23,)),
            metric_kind=str(pb.get("metric", "trace")),
            max_tags_per_phase=r.number(pb, "max_tags_per_phase", P, default=32, integer=True),
            normalize=bool(pb.get("normalize", True)),
            importance_default=r.number(pb, "importance_default", P, default=1.0),
        )
    except ValueError as exc:
        if isinstance(exc, ProjectError):
            raise
        r.fail(P, str(exc))

    cb = r.mapping(doc.get("cost"), ["cost"])
    C = ["cost"]
    default_alpha = tuple(1.0 if i == 0 else 0.5 for i in range(planning.n_sizes))
    try:
        cost = CostParams(
            s_min=r.number(cb, "s_min", C, default=0.06),
            p_c=r.number(cb, "p_c", C, default=0.02),
            alpha=r.numbers(cb, "alpha", C, default=default_alpha),
            lambda_rmv=r.number(cb, "lambda_rmv", C, default=0.1),
            lambda_rpl=r.number(cb, "lambda_rpl", C, default=0.0),
            k_wear=r.number(cb, "k_wear", C, default=1000, integer=True),
        )
    except ValueError as exc:
        if isinstance(exc, ProjectError):
            raise
        r.fail(C, str(exc))
    if len(cost.alpha) != planning.n_sizes:
        r.fail(C + ["alpha"], f"needs {planning.n_sizes} entries, one per tag size")

    gb = r.mapping(doc.get("ga"), ["ga"])
    G = ["ga"]
    try:
        ga = GaParams(
            population=r.number(gb, "population", G, default=50, integer=True),
            max_iters=r.number(gb, "max_iters", G, default=5000, integer=True),
            crossover_kind=str(gb.get("crossover", "single_point")),
            mutation_kind=str(gb.get("mutation", "flip")),
            mutation_rate=gb.get("mutation_rate"),
            elitism=r.number(gb, "elitism", G, default=2, integer=True),
            stall_window=gb.get("stall_window"),
            seed=r.number(gb, "seed", G, default=0, integer=True),
        )
    except ValueError as exc:
        if isinstance(exc, ProjectError):
            raise
        r.fail(G, str(exc))

    raw_phases = doc.get("phases")
    if not isinstance(raw_phases, list) or not raw_phases:
        r.fail(["phases"], "at least one phase is required")
    phases = []
    for j, ph in enumerate(raw_phases):
        path = ["phases", j]
        ph = r.mapping(ph, path)
        obstacles, installable = [], []
        for k, ob in enumerate(ph.get("obstacles") or []):
            opath = path + ["obstacles", k]
            ob = r.mapping(ob, opath)
            poly, flipped, n = _polygon(r, ob.get("vertices"), opath + ["vertices"])
            spec = ob.get("installable", [])
            if spec == "all":
                edges = list(range(n))
            elif isinstance(spec, list) and all(isinstance(e, int) and not isinstance(e, bool) for e in spec):
                edges = spec
                for e in edges:
                    if not 0 <= e < n:
                        r.fail(opath + ["installable"], f"edge index {e} out of range for {n} vertices")
            else:
                r.fail(opath + ["installable"], "expected 'all' or a list of edge indices")
            # edge indices refer to the file's vertex order
            installable.extend((len(obstacles), (n - 2 - e) % n if flipped else e) for e in edges)
            obstacles.append(poly)
        rois = []
        for k, ro in enumerate(ph.get("rois") or []):
            rpath = path + ["rois", k]
            ro = r.mapping(ro, rpath)
            poly, _, _ = _polygon(r, ro.get("vertices"), rpath + ["vertices"])
            imp = r.number(ro, "importance", rpath, default=planning.importance_default)
            if imp < 0:
                r.fail(rpath + ["importance"], "must be non-negative")
            rois.append(Roi(poly, imp))
        no_fly = []
        for k, nf in enumerate(ph.get("no_fly") or []):
            npath = path + ["no_fly", k]
            nf = r.mapping(nf, npath)
            poly, _, _ = _polygon(r, nf.get("vertices"), npath + ["vertices"])
            no_fly.append(poly)
        alts = r.numbers(ph, "flight_altitudes", path, default=planning.flight_altitudes)
        heights = r.numbers(ph, "install_heights", path, default=planning.install_heights)
        if any(a <= 0 for a in alts):
            r.fail(path + ["flight_altitudes"], "altitudes must be positive")
        try:
            phase = Phase(
                index=j,
                obstacles=tuple(obstacles),
                rois=tuple(rois),
                no_fly=tuple(no_fly),
                installable=tuple(sorted(installable)),
                flight_altitudes=alts,
                install_heights=heights,
                name=str(ph.get("name", f"T{j + 1}")),
            )
            phase.scene(origin=tuple(origin))
        except SceneError as exc:
            r.fail(path, str(exc))
        phases.append(phase)

    project = Project(
        phases=tuple(phases),
        camera=camera,
        planning=planning,
        cost=cost,
        noise=noise,
        origin=(float(origin[0]), float(origin[1])),
        name=str(doc.get("name", "")),
    )
    digest = hashlib.sha256(text.encode()).hexdigest()
    return LoadedProject(project, ga, digest, source)


def load_project(path) -> LoadedProject:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ProjectError("<file>", f"cannot read {path}: {exc}") from None
    return parse_project(text, str(path))


def override_planning(project: Project, **changes: Any) -> Project:
    from dataclasses import replace

    return replace(project, planning=replace(project.planning, **changes))
