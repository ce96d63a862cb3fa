"""Independent checks of the information model and the planner.

* finite-difference Jacobians,
* simulated noisy corner measurements and a per-pose Gauss-Newton
  maximum-likelihood estimator,
* Monte Carlo comparison of the estimator covariance with the inverse FIM,
* straight-line evaluation trajectories and position RMSE,
* exhaustive search for small planning instances.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import shapely
from shapely.geometry import LineString

from .ga import random_population
from .scene import Polygon, Scene, Slot, tag_corners_world
from .sensing import (
    CameraModel,
    DepthBehindCamera,
    NoiseModel,
    _camera_points,
    _jacobian_rows,
    _project,
    detectable,
    pose_fim,
    project,
    to_camera,
)
from .spatial import Pose, compose, exp_se3, invert, log_se3, perturb_left
from .valuation import PlanningContext

TRAJECTORY_KINDS = ("CWK", "LSA", "SPN")
MAX_ORACLE_STATES = 2**24


class SingularNormalEquations(RuntimeError):
    """The Gauss-Newton information matrix is too ill-conditioned to invert."""


class IllConditionedWarning(RuntimeWarning):
    pass


class RankDeficientFim(ValueError):
    pass


class InstanceTooLarge(ValueError):
    pass


class TrajectoryError(ValueError):
    pass


# ------------------------------------------------------------- jacobians


def fd_jacobian(t_vw: Pose, cam: CameraModel, p_w, step: float = 1e-6) -> np.ndarray:
    """Central differences of the pixel projection under left pose perturbations."""
    out = np.zeros((2, 6))
    for i in range(6):
        e = np.zeros(6)
        e[i] = step
        plus = np.array(project(to_camera(perturb_left(t_vw, e), cam, p_w), cam))
        minus = np.array(project(to_camera(perturb_left(t_vw, -e), cam, p_w), cam))
        out[:, i] = (plus - minus) / (2.0 * step)
    return out


def random_corner_case(cam: CameraModel, rng: np.random.Generator, min_depth: float = 0.2):
    """Random (pose, world point) with the point well inside the image."""
    t_vw = exp_se3(np.concatenate([rng.normal(0, 3.0, 3), rng.normal(0, 1.0, 3)]))
    z = rng.uniform(max(min_depth, 0.5), 8.0)
    u = rng.uniform(0.1, 0.9) * cam.width
    v = rng.uniform(0.1, 0.9) * cam.height
    pc = np.array([(u - cam.cu) * z / cam.fu, (v - cam.cv) * z / cam.fv, z, 1.0])
    t_cw = compose(cam.t_cv, t_vw)
    pw = invert(t_cw).matrix() @ pc
    return t_vw, pw


def jacobian_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    return float(np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(analytic)), 1e-300))


# ----------------------------------------------------------- measurements


class Measurement(NamedTuple):
    slot_id: int
    corner: int
    pixel: tuple[float, float]


ConfigEntry = tuple  # (slot_id, Slot, size)


def true_pixels(
    t_true: Pose,
    config: Sequence[ConfigEntry],
    scene: Scene,
    cam: CameraModel,
) -> list[tuple[int, int, float, float]]:
    """Noiseless ``(slot_id, corner, u, v)`` of every detectable tag, by slot id."""
    out = []
    for slot_id, slot, size in sorted(config, key=lambda e: e[0]):
        if not detectable(t_true, slot, size, scene, cam):
            continue
        corners = tag_corners_world(slot.option, slot.height, size)
        for n, c in enumerate(corners):
            u, v = project(to_camera(t_true, cam, c), cam)
            out.append((slot_id, n, u, v))
    return out


def add_noise(truth, noise: NoiseModel, rng: np.random.Generator) -> list[Measurement]:
    """Corrupt each pixel with isotropic Gaussian noise, two draws per corner."""
    if not truth:
        return []
    d = rng.normal(0.0, noise.sigma_px, (len(truth), 2))
    return [Measurement(sid, n, (u + du, v + dv)) for (sid, n, u, v), (du, dv) in zip(truth, d)]


def simulate_measurements(
    t_true: Pose,
    config: Sequence[ConfigEntry],
    scene: Scene,
    cam: CameraModel,
    noise: NoiseModel,
    rng: np.random.Generator,
) -> list[Measurement]:
    """Noisy corner pixels of every detectable tag in ``config``."""
    return add_noise(true_pixels(t_true, config, scene, cam), noise, rng)


@dataclass
class Estimate:
    pose: Pose
    information: np.ndarray
    iterations: int
    residual: np.ndarray
    jacobian: np.ndarray


def _stack(measurements, corner_lookup, t: Pose, cam: CameraModel):
    pts = np.array([corner_lookup[(m.slot_id, m.corner)][:3] for m in measurements])
    pix = np.array([m.pixel for m in measurements])
    c_vw = np.broadcast_to(t.rotation, (len(pts), 3, 3))
    q, pc = _camera_points(c_vw, t.translation, cam, pts)
    if np.any(~(pc[:, 2] >= cam.near_z)):
        raise DepthBehindCamera("a tag corner is below the near plane")
    u, v = _project(pc, cam)
    gu, gv = _jacobian_rows(q, pc, cam)
    res = np.stack([pix[:, 0] - u, pix[:, 1] - v], axis=1).reshape(-1)
    jac = np.stack([gu, gv], axis=1).reshape(-1, 6)
    return res, jac


def gauss_newton(
    measurements: Sequence[Measurement],
    slots: dict[int, tuple[Slot, float]],
    cam: CameraModel,
    t_init: Pose,
    sigma_px: float = 1.0,
    max_iters: int = 50,
    tol: float = 1e-10,
) -> Estimate:
    # each measurement is one corner, i.e. two scalars
    if 2 * len(measurements) < 8:
        raise SingularNormalEquations("fewer than 8 scalar measurements (no full tag)")
    lookup = {}
    for sid, (slot, size) in slots.items():
        for n, c in enumerate(tag_corners_world(slot.option, slot.height, size)):
            lookup[(sid, n)] = c
    # a uniform weight does not move the optimum; zero noise keeps unit weight
    w = 1.0 / sigma_px**2 if sigma_px > 0 else 1.0
    t = t_init
    it = 0
    for it in range(1, max_iters + 1):
        r, g = _stack(measurements, lookup, t, cam)
        h = w * g.T @ g
        cond = np.linalg.cond(h)
        if not np.isfinite(cond) or cond > 1e12:
            raise SingularNormalEquations(f"information matrix condition {cond:.3g} exceeds 1e12")
        xi = np.linalg.solve(h, w * g.T @ r)
        t = perturb_left(t, xi)
        if np.linalg.norm(xi) < tol:
            break
    r, g = _stack(measurements, lookup, t, cam)
    h = w * g.T @ g
    cond = np.linalg.cond(h)
    if cond > 1e12:
        raise SingularNormalEquations(f"information matrix condition {cond:.3g} exceeds 1e12")
    if cond > 1e8:
        warnings.warn(f"pose estimate is poorly constrained (condition {cond:.3g})", IllConditionedWarning, stacklevel=2)
    return Estimate(t, h, it, r, g)


def estimate_pose(
    measurements: Sequence[Measurement],
    slots: dict[int, tuple[Slot, float]],
    cam: CameraModel,
    t_init: Pose,
    sigma_px: float = 1.0,
) -> Pose:
    """Maximum-likelihood pose from corner pixels (Gauss-Newton, left updates)."""
    return gauss_newton(measurements, slots, cam, t_init, sigma_px).pose


def pose_error(t_est: Pose, t_true: Pose) -> np.ndarray:
    """Left-perturbation error xi with t_est = exp(xi^) t_true."""
    return log_se3(compose(t_est, invert(t_true)))


# ------------------------------------------------------------------ CRLB


class CrlbResult(NamedTuple):
    empirical_trace: float
    crlb_trace: float
    ratio: float
    trials: int
    failures: int
    mean_error: np.ndarray
    empirical_cov: np.ndarray


def crlb_check(
    t_true: Pose,
    config: Sequence[ConfigEntry],
    scene: Scene,
    cam: CameraModel,
    noise: NoiseModel,
    trials: int = 2000,
    seed: int = 0,
) -> CrlbResult:
    """Monte Carlo estimator covariance versus the inverse FIM at one pose.

    Trial ``k`` uses its own generator seeded with ``(seed, k)``.
    """
    fim = pose_fim(t_true, config, scene, cam, noise)
    eig = np.linalg.eigvalsh(fim)
    if eig[-1] <= 0 or eig[0] <= 1e-9 * eig[-1]:
        raise RankDeficientFim("pose FIM is rank deficient; the bound is undefined")
    slots = {sid: (slot, size) for sid, slot, size in config}
    truth = true_pixels(t_true, config, scene, cam)
    errors = []
    failures = 0
    for k in range(trials):
        rng = np.random.default_rng([seed, k])
        meas = add_noise(truth, noise, rng)
        try:
            est = gauss_newton(meas, slots, cam, t_true, noise.sigma_px)
        except (SingularNormalEquations, DepthBehindCamera):
            failures += 1
            continue
        errors.append(pose_error(est.pose, t_true))
    errors = np.array(errors)
    cov = np.cov(errors.T)
    bound = np.trace(np.linalg.inv(fim))
    return CrlbResult(
        float(np.trace(cov)), float(bound), float(np.trace(cov) / bound),
        len(errors), failures, errors.mean(axis=0), cov,
    )


# ------------------------------------------------------------ trajectories


@dataclass(frozen=True)
class TrajectoryParams:
    spacing: float = 0.25
    spin_step: float = 30.0
    spin_spacing: float = 1.0
    margin: float = 0.5
    cwk_side: int = 1  # +1: camera faces left of the motion direction


@dataclass(frozen=True)
class Trajectory:
    kind: str
    poses: tuple[Pose, ...]
    step: float
    positions: np.ndarray = field(repr=False)
    yaws: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.poses)


def line_trajectory(kind: str, start, end, altitude: float, params: TrajectoryParams = TrajectoryParams()) -> Trajectory:
    kind = kind.upper()
    if kind not in TRAJECTORY_KINDS:
        raise TrajectoryError(f"unknown trajectory kind {kind!r}")
    start = np.asarray(start, float)
    end = np.asarray(end, float)
    length = float(np.hypot(*(end - start)))
    heading = math.degrees(math.atan2(end[1] - start[1], end[0] - start[0]))
    spacing = params.spin_spacing if kind == "SPN" else params.spacing
    n = int(math.floor(length / spacing + 1e-9)) + 1
    direction = (end - start) / length if length > 0 else np.zeros(2)
    waypoints = [start + k * spacing * direction for k in range(n)]
    positions, yaws = [], []
    for w in waypoints:
        if kind == "LSA":
            ys = [heading]
        elif kind == "CWK":
            ys = [heading + 90.0 * params.cwk_side]
        else:
            m = int(round(360.0 / params.spin_step))
            ys = [k * params.spin_step for k in range(m)]
        for y in ys:
            positions.append((w[0], w[1], altitude))
            yaws.append(y % 360.0)
    poses = tuple(Pose.from_position_yaw(p, math.radians(y)) for p, y in zip(positions, yaws))
    return Trajectory(kind, poses, spacing, np.array(positions), np.array(yaws))


def gen_trajectory(kind: str, region: Polygon, altitude: float, params: TrajectoryParams = TrajectoryParams()) -> Trajectory:
    """Straight pass through the region along its longer bounding-box axis, through its centroid."""
    shape = region.to_shapely()
    x0, y0, x1, y1 = shape.bounds
    # pass through the centroid when it lies inside, else any interior point
    c = shape.centroid
    if not shape.contains(c):
        c = shape.representative_point()
    if x1 - x0 >= y1 - y0:
        line = LineString([(x0 - 1, c.y), (x1 + 1, c.y)])
    else:
        line = LineString([(c.x, y0 - 1), (c.x, y1 + 1)])
    inter = shape.intersection(line)
    parts = [g for g in getattr(inter, "geoms", [inter]) if g.geom_type == "LineString" and not g.is_empty]
    if not parts:
        raise TrajectoryError("no straight path through region")
    seg = max(parts, key=lambda g: g.length)
    (ax, ay), (bx, by) = seg.coords[0], seg.coords[-1]
    a, b = np.array([ax, ay]), np.array([bx, by])
    length = float(np.hypot(*(b - a)))
    if length <= 2 * params.margin:
        raise TrajectoryError("region too small for a trajectory with the requested margin")
    d = (b - a) / length
    traj = line_trajectory(kind, a + params.margin * d, b - params.margin * d, altitude, params)
    inside = shapely.contains_xy(shape, traj.positions[:, 0], traj.positions[:, 1])
    if not np.all(inside):
        raise TrajectoryError("trajectory exits the region")
    return traj


# ------------------------------------------------------------------- RMSE


class PoseRecord(NamedTuple):
    index: int
    n_tags: int
    estimate: np.ndarray | None
    error: float | None


@dataclass
class EvalReport:
    kind: str
    records: list[PoseRecord]
    rmse: float | None
    skipped: int
    failed: int

    @property
    def estimable(self) -> int:
        return sum(1 for r in self.records if r.error is not None)


def rmse_eval(
    trajectory: Trajectory,
    config: Sequence[ConfigEntry],
    scene: Scene,
    cam: CameraModel,
    noise: NoiseModel,
    seed: int = 0,
    init_sigma: float = 0.05,
) -> EvalReport:
    """3D position RMSE of per-pose estimates along a trajectory.

    Poses without a detectable tag are skipped; estimator failures are
    counted separately. Pose ``k`` draws from a generator seeded ``(seed, k)``.
    """
    slots = {sid: (slot, size) for sid, slot, size in config}
    records = []
    skipped = failed = 0
    sq = []
    for k, t_true in enumerate(trajectory.poses):
        rng = np.random.default_rng([seed, k])
        meas = simulate_measurements(t_true, config, scene, cam, noise, rng)
        n_tags = len({m.slot_id for m in meas})
        if n_tags == 0:
            skipped += 1
            records.append(PoseRecord(k, 0, None, None))
            continue
        t_init = perturb_left(t_true, rng.normal(0.0, init_sigma, 6))
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", IllConditionedWarning)
                est = gauss_newton(meas, slots, cam, t_init, noise.sigma_px)
        except (SingularNormalEquations, DepthBehindCamera, np.linalg.LinAlgError):
            failed += 1
            records.append(PoseRecord(k, n_tags, None, None))
            continue
        p_est = est.pose.origin_in_world()
        err = float(np.linalg.norm(p_est - t_true.origin_in_world()))
        sq.append(err * err)
        records.append(PoseRecord(k, n_tags, p_est, err))
    rmse = float(math.sqrt(sum(sq) / len(sq))) if sq else None
    return EvalReport(trajectory.kind, records, rmse, skipped, failed)


# --------------------------------------------------------------- planning


def _phase_states(feasible: np.ndarray, n_sizes: int, budget: int):
    for k in range(min(budget, len(feasible)) + 1):
        for combo in itertools.combinations(feasible, k):
            for sizes in itertools.product(range(1, n_sizes + 1), repeat=k):
                yield combo, sizes


def oracle_state_count(mask: np.ndarray, n_sizes: int, budget: int) -> int:
    total = 1
    for row in np.asarray(mask, bool):
        f = int(row.sum())
        total *= sum(math.comb(f, k) * n_sizes**k for k in range(min(budget, f) + 1))
    return total


def exhaustive_oracle(ctx: PlanningContext, budget: int | None = None) -> tuple[float, np.ndarray]:
    """Exact best score by enumerating every within-budget chromosome."""
    budget = ctx.params.max_tags_per_phase if budget is None else budget
    n_sizes = ctx.params.n_sizes
    count = oracle_state_count(ctx.mask, n_sizes, budget)
    if count > MAX_ORACLE_STATES:
        raise InstanceTooLarge(f"{count} states exceed the enumeration limit {MAX_ORACLE_STATES}")
    per_phase = [list(_phase_states(np.nonzero(row)[0], n_sizes, budget)) for row in ctx.mask]
    best_score, best = -np.inf, None
    genes = np.zeros((ctx.n_phases, ctx.n_slots), dtype=np.int8)
    for choice in itertools.product(*per_phase):
        genes[:] = 0
        for j, (combo, sizes) in enumerate(choice):
            genes[j, list(combo)] = sizes
        flat = genes.reshape(-1)
        s = ctx.score(flat)
        if s > best_score:
            best_score, best = s, flat.copy()
    return float(best_score), best


def random_baseline(ctx: PlanningContext, n: int = 100, seed: int = 0) -> tuple[float, np.ndarray]:
    """Best-scoring of ``n`` random feasible, within-budget configurations."""
    rng = np.random.default_rng(seed)
    pop = random_population(ctx.mask, ctx.params.n_sizes, n, ctx.params.max_tags_per_phase, rng)
    scores = [ctx.score(c) for c in pop]
    i = int(np.argmax(scores))
    return float(scores[i]), pop[i]
