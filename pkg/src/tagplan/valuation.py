"""Query poses, the FIM lookup table, utilities, cost and score of a tag plan."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .scene import (
    GridCell,
    Polygon,
    Roi,
    Scene,
    Slot,
    TagOption,
    discretize_rois,
    identify_tag_options,
    merge_phase_options,
    modified_rois,
)
from .sensing import (
    METRIC_KINDS,
    N_TRIU,
    CameraModel,
    NoiseModel,
    PoseBatch,
    metric_batch,
    tag_fims_batch,
)
from .spatial import Pose

log = logging.getLogger(__name__)

CACHE_VERSION = 1


def worker_count(default: int = 1) -> int:
    """Worker threads allowed by ``TAGPLAN_THREADS`` (results never depend on it)."""
    raw = os.environ.get("TAGPLAN_THREADS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        return default


# ------------------------------------------------------------------- params


@dataclass(frozen=True)
class PlanningParams:
    cell_size: float = 0.5
    delta_theta: float = 20.0
    d_res: float = 0.3
    flight_altitudes: tuple[float, ...] = (1.5,)
    install_heights: tuple[float, ...] = (1.5,)
    tag_sizes: tuple[float, ...] = (0.23,)
    metric_kind: str = "trace"
    max_tags_per_phase: int = 32
    normalize: bool = True
    importance_default: float = 1.0

    def __post_init__(self):
        steps = 360.0 / self.delta_theta
        if self.delta_theta <= 0 or abs(steps - round(steps)) > 1e-9:
            raise ValueError(f"delta_theta must divide 360, got {self.delta_theta}")
        sizes = list(self.tag_sizes)
        if not sizes or any(s <= 0 for s in sizes):
            raise ValueError("tag_sizes must be a non-empty list of positive sizes")
        diffs = np.diff(sizes)
        if len(sizes) > 1 and not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise ValueError("tag_sizes must be strictly ascending or descending")
        if self.metric_kind not in METRIC_KINDS:
            raise ValueError(f"metric_kind must be one of {METRIC_KINDS}")
        if self.cell_size <= 0 or self.d_res <= 0:
            raise ValueError("cell_size and d_res must be positive")
        if self.max_tags_per_phase < 0:
            raise ValueError("max_tags_per_phase must be non-negative")

    @property
    def n_sizes(self) -> int:
        return len(self.tag_sizes)

    @property
    def yaws(self) -> list[float]:
        return [k * self.delta_theta for k in range(int(round(360.0 / self.delta_theta)))]

    @property
    def largest_size_id(self) -> int:
        return int(np.argmax(self.tag_sizes)) + 1


@dataclass(frozen=True)
class CostParams:
    s_min: float = 0.06
    p_c: float = 0.02
    alpha: tuple[float, ...] = (1.0,)
    lambda_rmv: float = 0.1
    lambda_rpl: float = 0.0
    k_wear: int = 1000

    def __post_init__(self):
        if not self.alpha or any(not 0 < a <= 1 for a in self.alpha):
            raise ValueError("every alpha must lie in (0, 1]")
        if sum(1 for a in self.alpha if a == 1.0) != 1:
            raise ValueError("exactly one tag size must have alpha = 1 (the reference tag)")
        if not 0 < self.lambda_rmv <= 1:
            raise ValueError("lambda_rmv must lie in (0, 1]")
        if self.lambda_rpl < 0 or self.s_min < 0 or self.p_c < 0:
            raise ValueError("lambda_rpl, s_min and p_c must be non-negative")
        if self.k_wear < 1:
            raise ValueError("k_wear must be at least 1")

    def w_plc(self, n_cells_total: int) -> float:
        return self.s_min * self.p_c * n_cells_total

    def without_cost(self) -> "CostParams":
        return CostParams(0.0, 0.0, self.alpha, self.lambda_rmv, self.lambda_rpl, self.k_wear)


# ------------------------------------------------------------------ project


@dataclass(frozen=True)
class Phase:
    index: int
    obstacles: tuple[Polygon, ...]
    rois: tuple[Roi, ...]
    no_fly: tuple[Polygon, ...] = ()
    installable: tuple[tuple[int, int], ...] = ()
    flight_altitudes: tuple[float, ...] = (1.5,)
    install_heights: tuple[float, ...] = (1.5,)
    name: str = ""

    def scene(self, altitude: float | None = None, origin=(0.0, 0.0)) -> Scene:
        return Scene(
            phase_id=self.index,
            altitude=self.flight_altitudes[0] if altitude is None else altitude,
            obstacles=self.obstacles,
            rois=self.rois,
            no_fly=self.no_fly,
            installable=self.installable,
            origin=tuple(origin),
        )


@dataclass(frozen=True)
class Project:
    phases: tuple[Phase, ...]
    camera: CameraModel
    planning: PlanningParams = field(default_factory=PlanningParams)
    cost: CostParams = field(default_factory=CostParams)
    noise: NoiseModel = field(default_factory=NoiseModel)
    origin: tuple[float, float] = (0.0, 0.0)
    name: str = ""

    def fingerprint(self) -> str:
        """Content hash of everything that determines FIM table entries."""

        def poly(p: Polygon):
            return [[float(x), float(y)] for x, y in p.vertices]

        cam = self.camera
        doc = {
            "origin": list(self.origin),
            "phases": [
                {
                    "obstacles": [poly(p) for p in ph.obstacles],
                    "rois": [[poly(r.polygon), r.importance] for r in ph.rois],
                    "no_fly": [poly(p) for p in ph.no_fly],
                    "installable": [list(e) for e in ph.installable],
                    "alt": list(ph.flight_altitudes),
                    "heights": list(ph.install_heights),
                }
                for ph in self.phases
            ],
            "camera": [
                cam.fu, cam.fv, cam.cu, cam.cv, cam.width, cam.height, cam.dov, cam.sl_min,
                cam.near_z, cam.max_incidence_deg,
                cam.t_cv.rotation.tolist(), cam.t_cv.translation.tolist(),
            ],
            "sigma": self.noise.sigma_px,
            "planning": [
                self.planning.cell_size, self.planning.delta_theta, self.planning.d_res,
                list(self.planning.tag_sizes),
            ],
            "version": CACHE_VERSION,
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


class QueryPose(NamedTuple):
    cell_index: int
    altitude: float
    yaw: float
    pose: Pose


def enumerate_query_poses(
    cells: Sequence[GridCell],
    params: PlanningParams,
    altitudes: Sequence[float] | None = None,
) -> list[QueryPose]:
    """All (cell, altitude, yaw) poses; level flight, heading = yaw."""
    alts = params.flight_altitudes if altitudes is None else altitudes
    out = []
    for ci, cell in enumerate(cells):
        for z in alts:
            for yaw in params.yaws:
                pose = Pose.from_position_yaw((cell.center[0], cell.center[1], z), math.radians(yaw))
                out.append(QueryPose(ci, float(z), float(yaw), pose))
    return out


# ---------------------------------------------------------------- FIM table


class _Column:
    __slots__ = ("known", "chunks_idx", "chunks_val", "_packed")

    def __init__(self, n: int):
        self.known = np.zeros(n, dtype=bool)
        self.chunks_idx: list[np.ndarray] = []
        self.chunks_val: list[np.ndarray] = []
        self._packed = None

    def insert(self, local_idx: np.ndarray, values: np.ndarray):
        fresh = ~self.known[local_idx]
        local_idx, values = local_idx[fresh], values[fresh]
        if len(local_idx) == 0:
            return
        self.known[local_idx] = True
        nz = np.any(values != 0.0, axis=1)
        if np.any(nz):
            self.chunks_idx.append(local_idx[nz].copy())
            self.chunks_val.append(values[nz].copy())
        self._packed = None

    def packed(self) -> tuple[np.ndarray, np.ndarray]:
        if self._packed is None:
            if self.chunks_idx:
                idx = np.concatenate(self.chunks_idx)
                val = np.concatenate(self.chunks_val)
                order = np.argsort(idx, kind="stable")
                self._packed = (idx[order], val[order])
            else:
                self._packed = (np.zeros(0, dtype=np.int64), np.zeros((0, N_TRIU)))
        return self._packed

    def lookup(self, local: int) -> np.ndarray:
        idx, val = self.packed()
        k = np.searchsorted(idx, local)
        if k < len(idx) and idx[k] == local:
            return val[k]
        return np.zeros(N_TRIU)


class FimTable:
    """Cache of packed tag FIMs keyed by (query-pose id, slot id, size id).

    Pose ids are global across phases. Entries are stored column-wise (one
    column per (slot, size)); undetectable pairs are recorded as known zeros.
    """

    def __init__(self, pose_phase: np.ndarray, pose_local: np.ndarray, phase_sizes: Sequence[int]):
        self.pose_phase = np.asarray(pose_phase)
        self.pose_local = np.asarray(pose_local)
        self.phase_sizes = list(phase_sizes)
        self._cols: dict[tuple[int, int, int], _Column] = {}
        self._lock = threading.Lock()
        self.computed = 0  # pose-level kernel evaluations
        self.hits = 0
        self.misses = 0

    def _column(self, phase: int, slot_id: int, size_id: int) -> _Column:
        key = (phase, slot_id, size_id)
        col = self._cols.get(key)
        if col is None:
            with self._lock:
                col = self._cols.setdefault(key, _Column(self.phase_sizes[phase]))
        return col

    def has(self, pose_id: int, slot_id: int, size_id: int) -> bool:
        col = self._cols.get((int(self.pose_phase[pose_id]), slot_id, size_id))
        return col is not None and bool(col.known[self.pose_local[pose_id]])

    def get(self, pose_id: int, slot_id: int, size_id: int) -> np.ndarray | None:
        phase = int(self.pose_phase[pose_id])
        col = self._cols.get((phase, slot_id, size_id))
        local = int(self.pose_local[pose_id])
        if col is None or not col.known[local]:
            return None
        return col.lookup(local)

    def put(self, phase: int, slot_id: int, size_id: int, local_idx: np.ndarray, values: np.ndarray):
        col = self._column(phase, slot_id, size_id)
        with self._lock:
            col.insert(np.asarray(local_idx, dtype=np.int64), np.asarray(values, dtype=float))

    def column(self, phase: int, slot_id: int, size_id: int) -> tuple[np.ndarray, np.ndarray] | None:
        """(local pose indices, packed FIMs) of detectable poses, if fully known."""
        col = self._cols.get((phase, slot_id, size_id))
        if col is None or not col.known.all():
            return None
        return col.packed()

    def missing(self, phase: int, slot_id: int, size_id: int) -> np.ndarray:
        col = self._cols.get((phase, slot_id, size_id))
        if col is None:
            return np.arange(self.phase_sizes[phase])
        return np.nonzero(~col.known)[0]

    def __len__(self) -> int:
        return int(sum(c.known.sum() for c in self._cols.values()))

    # -- persistence

    def save(self, path: Path, content_hash: str):
        arrays = {"_hash": np.array(content_hash), "_version": np.array(CACHE_VERSION)}
        for n, (key, col) in enumerate(sorted(self._cols.items())):
            idx, val = col.packed()
            arrays[f"k{n}"] = np.array(key, dtype=np.int64)
            arrays[f"m{n}"] = col.known
            arrays[f"i{n}"] = idx
            arrays[f"v{n}"] = val
        tmp = Path(str(path) + ".tmp.npz")
        np.savez_compressed(tmp, **arrays)
        os.replace(tmp, path)

    def load(self, path: Path, content_hash: str) -> bool:
        """Merge a cache file; returns False (and loads nothing) on hash mismatch."""
        try:
            data = np.load(path, allow_pickle=False)
        except (OSError, ValueError):
            return False
        with data:
            if str(data["_hash"]) != content_hash or int(data["_version"]) != CACHE_VERSION:
                log.warning("ignoring stale FIM cache %s", path)
                return False
            n = sum(1 for k in data.files if k.startswith("k"))
            for i in range(n):
                phase, slot_id, size_id = (int(x) for x in data[f"k{i}"])
                known = data[f"m{i}"]
                col = self._column(phase, slot_id, size_id)
                idx, val = data[f"i{i}"], data[f"v{i}"]
                with self._lock:
                    keep = ~col.known[idx]
                    col.known |= known
                    if keep.any():
                        col.chunks_idx.append(idx[keep])
                        col.chunks_val.append(val[keep])
                    col._packed = None
        return True


# ------------------------------------------------------------ change counts


class Changes(NamedTuple):
    n_plc: np.ndarray  # per size
    n_rmv: int
    n_rpl: int

    @property
    def total_placements(self) -> int:
        return int(self.n_plc.sum())


def count_changes(genes: np.ndarray, mask: np.ndarray, n_sizes: int, k_wear: int = 1000) -> Changes:
    """Placements per size, removals and wear replacements of a chromosome.

    ``genes`` and ``mask`` have shape (n_phases, n_locations) or are flat with
    phase-major layout matching ``mask``.
    """
    mask = np.asarray(mask, dtype=bool)
    g = np.asarray(genes).reshape(mask.shape)
    n_phases, n_loc = g.shape
    cur = np.where(mask, g, 0).astype(np.int64)
    prev = np.vstack([np.zeros((1, n_loc), dtype=np.int64), cur[:-1]])
    changed = cur != prev
    n_plc = np.bincount(cur[(cur > 0) & changed], minlength=n_sizes + 1)[1:]
    n_rmv = int(np.count_nonzero((prev > 0) & changed & mask))
    n_rpl = 0
    if n_phases > k_wear:
        # a tag kept for L consecutive phases needs floor((L - 1) / k_wear) replacements
        run = np.zeros(n_loc, dtype=np.int64)
        for j in range(n_phases):
            ended = (run > 0) & changed[j]
            n_rpl += int(((run[ended] - 1) // k_wear).sum())
            run = np.where(cur[j] > 0, np.where(changed[j], 1, run + 1), 0)
        n_rpl += int(((run[run > 0] - 1) // k_wear).sum())
    return Changes(n_plc, n_rmv, n_rpl)


def cost_bracket(changes: Changes, cp: CostParams) -> float:
    n_plc = np.asarray(changes.n_plc, dtype=float)
    alpha = np.asarray(cp.alpha, dtype=float)
    if len(alpha) != len(n_plc):
        raise ValueError("alpha must have one entry per tag size")
    return float(np.sum(n_plc / alpha) + changes.n_rmv / cp.lambda_rmv + cp.lambda_rpl * changes.n_rpl)


def cost(changes: Changes, n_cells_total: int, cp: CostParams) -> float:
    """Installation cost J = w_plc * [sum n_plc_i/alpha_i + n_rmv/lambda_rmv + lambda_rpl n_rpl]."""
    return cp.w_plc(n_cells_total) * cost_bracket(changes, cp)


# ------------------------------------------------------------ planning data


@dataclass
class PhaseData:
    phase: Phase
    scene: Scene
    cells: list[GridCell]
    poses: list[QueryPose]
    batch: PoseBatch
    pose_cell: np.ndarray
    cell_weight: np.ndarray
    pose_offset: int
    capacity: np.ndarray | None = None


class Evaluation(NamedTuple):
    score: float
    utility: float
    cost: float
    changes: Changes


class PlanningContext:
    """Everything needed to score chromosomes for one project.

    Genes are laid out phase-major: ``genes[j * n_slots + s]`` is the size id
    (0 = no tag) of slot ``s`` in phase ``j``.
    """

    def __init__(self, project: Project, table: FimTable | None = None, workers: int | None = None):
        self.project = project
        self.params = project.planning
        self.cost_params = project.cost
        self.workers = worker_count() if workers is None else workers
        p = self.params
        if len(project.cost.alpha) != p.n_sizes:
            raise ValueError("cost.alpha needs one entry per tag size")

        per_phase_options = []
        for ph in project.phases:
            per_phase_options.append(
                identify_tag_options(ph.scene(origin=project.origin), p.d_res, p.tag_sizes, ph.install_heights)
            )
        self.locations: list[TagOption] = merge_phase_options(per_phase_options)
        heights = sorted({h for ph in project.phases for h in ph.install_heights})
        self.slots: list[Slot] = [Slot(o, h) for o in self.locations for h in heights if h in o.heights]
        self.mask = np.zeros((len(project.phases), len(self.slots)), dtype=bool)
        for s, slot in enumerate(self.slots):
            for j, ph in enumerate(project.phases):
                self.mask[j, s] = j in slot.option.feasible_phases and slot.height in ph.install_heights

        self.phases: list[PhaseData] = []
        offset = 0
        for j, ph in enumerate(project.phases):
            scene = ph.scene(origin=project.origin)
            cells = discretize_rois(modified_rois(scene, p.cell_size), p.cell_size, project.origin)
            poses = enumerate_query_poses(cells, p, ph.flight_altitudes)
            batch = PoseBatch.from_poses([q.pose for q in poses])
            pose_cell = np.array([q.cell_index for q in poses], dtype=np.int64)
            weight = np.array([ph.rois[c.roi_index].importance for c in cells], dtype=float)
            self.phases.append(PhaseData(ph, scene, cells, poses, batch, pose_cell, weight, offset))
            offset += len(poses)
        pose_phase = np.concatenate([np.full(len(d.poses), j) for j, d in enumerate(self.phases)]) if offset else np.zeros(0, int)
        pose_local = np.concatenate([np.arange(len(d.poses)) for d in self.phases]) if offset else np.zeros(0, int)
        self.table = table if table is not None else FimTable(pose_phase, pose_local, [len(d.poses) for d in self.phases])
        self.n_cells_total = sum(len(d.cells) for d in self.phases)
        self._cell_trace: dict[tuple[int, int, int], np.ndarray] = {}
        self._phase_memo: dict[tuple[int, bytes], float] = {}
        self._memo_lock = threading.Lock()
        self.memo_hits = 0
        self.memo_lookups = 0
        self._score_memo: dict[bytes, float] = {}
        self.evaluations = 0

    # -- shapes

    @property
    def n_phases(self) -> int:
        return len(self.phases)

    @property
    def n_slots(self) -> int:
        return len(self.slots)

    @property
    def n_genes(self) -> int:
        return self.n_phases * self.n_slots

    @property
    def flat_mask(self) -> np.ndarray:
        return self.mask.reshape(-1)

    def size_of(self, size_id: int) -> float:
        return self.params.tag_sizes[size_id - 1]

    # -- table access

    def get_or_compute(self, pose_id: int, slot_id: int, size_id: int) -> np.ndarray:
        """Packed FIM of one (pose, slot, size); computed and stored on first use."""
        cached = self.table.get(pose_id, slot_id, size_id)
        if cached is not None:
            self.table.hits += 1
            return cached
        self.table.misses += 1
        phase = int(self.table.pose_phase[pose_id])
        local = int(self.table.pose_local[pose_id])
        d = self.phases[phase]
        _, f = tag_fims_batch(
            d.batch.take([local]), self.slots[slot_id], self.size_of(size_id), d.scene,
            self.project.camera, self.project.noise,
        )
        self.table.computed += 1
        self.table.put(phase, slot_id, size_id, np.array([local]), f)
        return self.table.get(pose_id, slot_id, size_id)

    def column(self, phase: int, slot_id: int, size_id: int) -> tuple[np.ndarray, np.ndarray]:
        col = self.table.column(phase, slot_id, size_id)
        if col is not None:
            self.table.hits += 1
            return col
        self.table.misses += 1
        d = self.phases[phase]
        missing = self.table.missing(phase, slot_id, size_id)
        _, f = tag_fims_batch(
            d.batch.take(missing), self.slots[slot_id], self.size_of(size_id), d.scene,
            self.project.camera, self.project.noise,
        )
        self.table.computed += len(missing)
        self.table.put(phase, slot_id, size_id, missing, f)
        return self.table.column(phase, slot_id, size_id)

    def precompute(self, size_ids: Sequence[int] | None = None):
        """Fill the whole table (decoupled mode); parallel over columns."""
        ids = range(1, self.params.n_sizes + 1) if size_ids is None else size_ids
        keys = [
            (j, s, k)
            for j in range(self.n_phases)
            for s in range(self.n_slots)
            if self.mask[j, s]
            for k in ids
        ]
        if self.workers > 1:
            with ThreadPoolExecutor(self.workers) as ex:
                list(ex.map(lambda key: self.column(*key), keys))
        else:
            for key in keys:
                self.column(*key)

    # -- utilities

    def _cell_trace_of(self, phase: int, slot_id: int, size_id: int) -> np.ndarray:
        key = (phase, slot_id, size_id)
        vec = self._cell_trace.get(key)
        if vec is None:
            idx, val = self.column(phase, slot_id, size_id)
            d = self.phases[phase]
            vec = np.bincount(d.pose_cell[idx], weights=metric_batch(val, "trace"), minlength=len(d.cells))
            self._cell_trace[key] = vec
        return vec

    def raw_cell_utilities(self, phase: int, active: Sequence[tuple[int, int]], kind: str | None = None) -> np.ndarray:
        """Per-cell sum over query poses of metric(sum of active tag FIMs).

        ``active`` holds (slot id, size id) pairs; accumulation runs in
        ascending slot id order.
        """
        kind = self.params.metric_kind if kind is None else kind
        d = self.phases[phase]
        active = sorted(active)
        if kind == "trace":
            # trace is linear, so per-tag cell sums can be added directly
            out = np.zeros(len(d.cells))
            for slot_id, size_id in active:
                out += self._cell_trace_of(phase, slot_id, size_id)
            return out
        total = np.zeros((len(d.poses), N_TRIU))
        for slot_id, size_id in active:
            idx, val = self.column(phase, slot_id, size_id)
            total[idx] += val
        return np.bincount(d.pose_cell, weights=metric_batch(total, kind), minlength=len(d.cells))

    def cell_capacity(self, phase: int) -> np.ndarray:
        d = self.phases[phase]
        if d.capacity is None:
            big = self.params.largest_size_id
            active = [(s, big) for s in range(self.n_slots) if self.mask[phase, s]]
            d.capacity = self.raw_cell_utilities(phase, active)
        return d.capacity

    def cell_utilities(self, phase: int, active: Sequence[tuple[int, int]]) -> np.ndarray:
        """Cell utilities as used in the objective (normalized in decoupled mode)."""
        raw = self.raw_cell_utilities(phase, active)
        if not self.params.normalize:
            return raw
        cap = self.cell_capacity(phase)
        out = np.zeros_like(raw)
        pos = cap > 0
        out[pos] = np.minimum(raw[pos] / cap[pos], 1.0)
        return out

    def active_of(self, genes: np.ndarray, phase: int) -> list[tuple[int, int]]:
        block = np.asarray(genes).reshape(self.n_phases, self.n_slots)[phase]
        nz = np.nonzero(block)[0]
        return [(int(s), int(block[s])) for s in nz]

    def config_of(self, genes: np.ndarray, phase: int) -> list[tuple[int, Slot, float]]:
        """Active ``(slot id, slot, tag size in meters)`` entries of one phase."""
        return [(s, self.slots[s], self.size_of(k)) for s, k in self.active_of(genes, phase)]

    def _phase_key(self, genes: np.ndarray, phase: int) -> tuple[int, bytes]:
        block = np.asarray(genes).reshape(self.n_phases, self.n_slots)[phase]
        return phase, block.astype(np.int8).tobytes()

    def _compute_phase_utility(self, key: tuple[int, bytes]) -> float:
        phase, raw = key
        block = np.frombuffer(raw, dtype=np.int8)
        active = [(int(s), int(block[s])) for s in np.nonzero(block)[0]]
        u = self.cell_utilities(phase, active)
        return math.fsum(self.phases[phase].cell_weight * u)

    def phase_utility(self, genes: np.ndarray, phase: int) -> float:
        key = self._phase_key(genes, phase)
        hit = self._phase_memo.get(key)
        if hit is not None:
            return hit
        val = self._compute_phase_utility(key)
        with self._memo_lock:
            self._phase_memo[key] = val
        return val

    def total_utility(self, genes: np.ndarray) -> float:
        return math.fsum(self.phase_utility(genes, j) for j in range(self.n_phases))

    def changes(self, genes: np.ndarray) -> Changes:
        return count_changes(genes, self.mask, self.params.n_sizes, self.cost_params.k_wear)

    def evaluate(self, genes: np.ndarray) -> Evaluation:
        self.evaluations += 1
        u = self.total_utility(genes)
        ch = self.changes(genes)
        j = cost(ch, self.n_cells_total, self.cost_params)
        return Evaluation(u - j, u, j, ch)

    def score(self, genes: np.ndarray) -> float:
        return self.evaluate(genes).score

    def score_many(self, population: Sequence[np.ndarray]) -> list[float]:
        """Scores of a population; phase utilities are memoized across calls.

        Memo bookkeeping happens on the calling thread, so scores and the
        hit statistics do not depend on the worker count.
        """
        keys = [[self._phase_key(g, j) for j in range(self.n_phases)] for g in population]
        todo: dict[tuple[int, bytes], None] = {}
        for row in keys:
            for k in row:
                self.memo_lookups += 1
                if k in self._phase_memo:
                    self.memo_hits += 1
                elif k not in todo:
                    todo[k] = None
        todo_keys = list(todo)
        if self.workers > 1 and len(todo_keys) > 1:
            with ThreadPoolExecutor(self.workers) as ex:
                values = list(ex.map(self._compute_phase_utility, todo_keys))
        else:
            values = [self._compute_phase_utility(k) for k in todo_keys]
        self._phase_memo.update(zip(todo_keys, values))
        out = []
        for g, row in zip(population, keys):
            self.evaluations += 1
            gkey = b"".join(k[1] for k in row)
            s = self._score_memo.get(gkey)
            if s is None:
                u = math.fsum(self._phase_memo[k] for k in row)
                s = u - cost(self.changes(g), self.n_cells_total, self.cost_params)
                self._score_memo[gkey] = s
            out.append(s)
        return out

    def cache_stats(self) -> tuple[int, int]:
        return self.memo_hits, self.memo_lookups

    def all_occupied(self) -> np.ndarray:
        """Every feasible slot at the largest size."""
        return np.where(self.mask, self.params.largest_size_id, 0).astype(np.int8).reshape(-1)

    def with_cost(self, cp: CostParams) -> "PlanningContext":
        """Shallow copy sharing the table and geometry but scored with other cost params."""
        other = object.__new__(PlanningContext)
        other.__dict__.update(self.__dict__)
        other.cost_params = cp
        other._score_memo = {}
        return other
