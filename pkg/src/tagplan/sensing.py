"""Pinhole camera, tag detectability and Fisher information of tag corners.

The batched kernel :func:`tag_fims_batch` is the single implementation of the
detectability gates and the per-tag information matrix; the scalar helpers
(:func:`detectable`, :func:`tag_fim`, ...) call into the same arithmetic so that
results are bit-identical however they are grouped. All arithmetic is written
elementwise (no BLAS) for the same reason.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .scene import Scene, Slot, segments_clear, tag_corners_world
from .spatial import Pose, odot

METRIC_KINDS = ("trace", "logdet", "mineig")

# Upper-triangle (row-major) index pairs of a 6x6 symmetric matrix.
TRIU_I, TRIU_J = np.triu_indices(6)
N_TRIU = len(TRIU_I)  # 21


class DepthBehindCamera(ValueError):
    """A point is closer to (or behind) the camera than the near plane."""


def forward_camera_extrinsics(offset=(0.0, 0.0, 0.0)) -> Pose:
    """Vehicle-to-camera transform for a forward-looking camera.

    Vehicle frame: x forward, y left, z up. Camera frame: z along the optical
    axis, x right, y down. ``offset`` is the camera center in the vehicle frame.
    """
    rot = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    return Pose(rot, -rot @ np.asarray(offset, dtype=float))


@dataclass(frozen=True)
class CameraModel:
    fu: float
    fv: float
    cu: float
    cv: float
    width: int
    height: int
    dov: float = 8.0
    t_cv: Pose = field(default_factory=forward_camera_extrinsics)
    sl_min: float = 20.0
    near_z: float = 0.01
    max_incidence_deg: float | None = None

    def __post_init__(self):
        if not (self.fu > 0 and self.fv > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cu < self.width and 0 < self.cv < self.height):
            raise ValueError("principal point must lie inside the image")
        if self.sl_min < 4:
            raise ValueError("sl_min below the detector's 4 px floor")
        if not self.dov > 0 or not self.near_z > 0:
            raise ValueError("dov and near_z must be positive")


@dataclass(frozen=True)
class NoiseModel:
    sigma_px: float = 1.0

    def __post_init__(self):
        if not self.sigma_px >= 0:
            raise ValueError("sigma_px must be non-negative")

    @property
    def covariance(self) -> np.ndarray:
        return self.sigma_px**2 * np.eye(2)


# ------------------------------------------------------------------ packing


def pack_fim(f: np.ndarray) -> np.ndarray:
    """6x6 (or stack of) symmetric matrices -> 21 upper-triangle entries."""
    f = np.asarray(f)
    return f[..., TRIU_I, TRIU_J]


def unpack_fim(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (6, 6))
    out[..., TRIU_I, TRIU_J] = v
    out[..., TRIU_J, TRIU_I] = v
    return out


# ------------------------------------------------------------- elementwise


def _matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Row-wise m @ v for m (..., 3, 3), v (..., 3) without BLAS."""
    return m[..., :, 0] * v[..., None, 0] + m[..., :, 1] * v[..., None, 1] + m[..., :, 2] * v[..., None, 2]


def _camera_points(c_vw, r_vw, cam: CameraModel, p3):
    """Vehicle-frame and camera-frame coordinates of world points p3 (..., 3)."""
    q = _matvec(c_vw, p3) + r_vw
    c_cv = np.broadcast_to(cam.t_cv.rotation, q.shape[:-1] + (3, 3))
    pc = _matvec(c_cv, q) + cam.t_cv.translation
    return q, pc


def _jacobian_rows(q, pc, cam: CameraModel):
    """Analytic 2x6 corner Jacobian rows (g_u, g_v), each (..., 6).

    Chain rule of the pinhole projection through the camera-frame point under
    a left perturbation of the vehicle pose: dpc/dxi = C_cv [I, -q^].
    """
    c_cv = cam.t_cv.rotation
    shape = q.shape[:-1]
    zf = np.empty(shape + (3, 6))
    for i in range(3):
        row = np.broadcast_to(c_cv[i], q.shape)
        zf[..., i, :3] = row
        zf[..., i, 3:] = np.cross(q, row)
    x, y, z = pc[..., 0], pc[..., 1], pc[..., 2]
    inv_z = 1.0 / z
    gu = (cam.fu * inv_z)[..., None] * zf[..., 0, :] - (cam.fu * x * inv_z * inv_z)[..., None] * zf[..., 2, :]
    gv = (cam.fv * inv_z)[..., None] * zf[..., 1, :] - (cam.fv * y * inv_z * inv_z)[..., None] * zf[..., 2, :]
    return gu, gv


def _project(pc, cam: CameraModel):
    return cam.fu * pc[..., 0] / pc[..., 2] + cam.cu, cam.fv * pc[..., 1] / pc[..., 2] + cam.cv


def _fim_from_rows(gus, gvs, sigma_px: float) -> np.ndarray:
    """Sum over corners of G^T Sigma^-1 G, packed to 21 entries."""
    if not sigma_px > 0:
        raise ValueError("information is unbounded for noise-free measurements")
    out = np.zeros(gus[0].shape[:-1] + (N_TRIU,))
    for gu, gv in zip(gus, gvs):
        out += gu[..., TRIU_I] * gu[..., TRIU_J] + gv[..., TRIU_I] * gv[..., TRIU_J]
    return out / (sigma_px * sigma_px)


# --------------------------------------------------------------- scalar API


def to_camera(t_vw: Pose, cam: CameraModel, p_w) -> np.ndarray:
    p = np.asarray(p_w, dtype=float).reshape(-1)[:3]
    _, pc = _camera_points(t_vw.rotation, t_vw.translation, cam, p)
    return pc


def project(p_c, cam: CameraModel) -> tuple[float, float]:
    p_c = np.asarray(p_c, dtype=float)
    if not p_c[2] >= cam.near_z:
        raise DepthBehindCamera(f"depth {p_c[2]:.6g} m is below the near plane {cam.near_z} m")
    u, v = _project(p_c, cam)
    return float(u), float(v)


def in_fov(px, cam: CameraModel) -> bool:
    u, v = px
    return bool(0 <= u < cam.width and 0 <= v < cam.height)


def corner_jacobian(t_vw: Pose, cam: CameraModel, p_w) -> np.ndarray:
    """2x6 Jacobian of a corner's pixel coordinates w.r.t. a left pose perturbation."""
    p = np.asarray(p_w, dtype=float).reshape(-1)[:3]
    q, pc = _camera_points(t_vw.rotation, t_vw.translation, cam, p)
    if not pc[2] >= cam.near_z:
        raise DepthBehindCamera(f"depth {pc[2]:.6g} m is below the near plane {cam.near_z} m")
    gu, gv = _jacobian_rows(q, pc, cam)
    return np.stack([gu, gv])


def corner_jacobian_matrix_form(t_vw: Pose, cam: CameraModel, p_w) -> np.ndarray:
    """Same Jacobian assembled literally as S @ (D^T T_cv (T_vw p)^odot).

    Kept as a cross-check for the elementwise kernel.
    """
    p = np.append(np.asarray(p_w, dtype=float).reshape(-1)[:3], 1.0)
    t_cw = cam.t_cv.matrix() @ t_vw.matrix()
    x, y, z = (t_cw @ p)[:3]
    if not z >= cam.near_z:
        raise DepthBehindCamera(f"depth {z:.6g} m is below the near plane {cam.near_z} m")
    k = np.array([[cam.fu, 0.0, cam.cu], [0.0, cam.fv, cam.cv], [0.0, 0.0, 1.0]])
    dproj = np.array([[1.0 / z, 0.0, -x / z**2], [0.0, 1.0 / z, -y / z**2], [0.0, 0.0, 0.0]])
    s = (k @ dproj)[:2]
    zf = (cam.t_cv.matrix() @ odot(t_vw.matrix() @ p))[:3]
    return s @ zf


def tag_fim(t_vw: Pose, corners, cam: CameraModel, noise: NoiseModel) -> np.ndarray:
    """6x6 information matrix of the four corners of one tag (no gating)."""
    corners = np.asarray(corners, dtype=float)[:, :3]
    q, pc = _camera_points(t_vw.rotation, t_vw.translation, cam, corners)
    if np.any(~(pc[:, 2] >= cam.near_z)):
        raise DepthBehindCamera("a tag corner is below the near plane")
    rows = [_jacobian_rows(q[n], pc[n], cam) for n in range(len(corners))]
    return unpack_fim(_fim_from_rows([r[0] for r in rows], [r[1] for r in rows], noise.sigma_px))


# ------------------------------------------------------------ batched kernel


@dataclass(frozen=True)
class PoseBatch:
    """Stacked world-to-vehicle transforms plus vehicle positions."""

    rotations: np.ndarray  # (N, 3, 3)
    translations: np.ndarray  # (N, 3)
    positions: np.ndarray  # (N, 3) vehicle origin in world

    @classmethod
    def from_poses(cls, poses: Sequence[Pose]) -> "PoseBatch":
        rots = np.stack([p.rotation for p in poses]) if poses else np.zeros((0, 3, 3))
        trans = np.stack([p.translation for p in poses]) if poses else np.zeros((0, 3))
        return cls(rots, trans, -_matvec(np.swapaxes(rots, -1, -2), trans))

    def take(self, idx) -> "PoseBatch":
        return PoseBatch(self.rotations[idx], self.translations[idx], self.positions[idx])

    def __len__(self) -> int:
        return len(self.rotations)


def camera_centers(batch: PoseBatch, cam: CameraModel) -> np.ndarray:
    """World position of the optical center for each pose."""
    cam_in_vehicle = cam.t_cv.origin_in_world()
    r_wv = np.swapaxes(batch.rotations, -1, -2)
    return batch.positions + _matvec(r_wv, np.broadcast_to(cam_in_vehicle, batch.positions.shape))


def tag_fims_batch(
    batch: PoseBatch,
    slot: Slot,
    size: float,
    scene: Scene,
    cam: CameraModel,
    noise: NoiseModel,
) -> tuple[np.ndarray, np.ndarray]:
    """Detectability mask (N,) and packed FIMs (N, 21) for one tag over many poses.

    Undetectable rows are zero. Gates, cheapest first: range, front face,
    depth and field of view for all corners, minimum projected side, and
    finally 2D line of sight from the camera footprint to every corner.
    """
    n = len(batch)
    fims = np.zeros((n, N_TRIU))
    ok = np.ones(n, dtype=bool)
    if n == 0:
        return ok, fims
    option = slot.option
    anchor = np.asarray(option.anchor)
    normal = np.asarray(option.normal)
    center = np.array([anchor[0], anchor[1], slot.height])
    corners = tag_corners_world(option, slot.height, size)[:, :3]

    pos = batch.positions
    ok &= np.sqrt(((pos - center) ** 2).sum(axis=1)) < cam.dov
    rel = pos[:, :2] - anchor
    facing = rel[:, 0] * normal[0] + rel[:, 1] * normal[1]
    ok &= facing > 0
    if cam.max_incidence_deg is not None:
        cos_inc = facing / np.maximum(np.hypot(rel[:, 0], rel[:, 1]), 1e-300)
        ok &= cos_inc >= np.cos(np.radians(cam.max_incidence_deg))
    idx = np.nonzero(ok)[0]
    if len(idx) == 0:
        return ok, fims

    c_vw = batch.rotations[idx]
    r_vw = batch.translations[idx]
    qs, pcs = [], []
    good = np.ones(len(idx), dtype=bool)
    us, vs = [], []
    for k in range(4):
        q, pc = _camera_points(c_vw, r_vw, cam, np.broadcast_to(corners[k], r_vw.shape))
        z = pc[:, 2]
        good &= z >= cam.near_z
        safe = np.where(good, z, 1.0)
        u = cam.fu * pc[:, 0] / safe + cam.cu
        v = cam.fv * pc[:, 1] / safe + cam.cv
        good &= (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
        qs.append(q)
        pcs.append(pc)
        us.append(u)
        vs.append(v)
    sides = [np.hypot(us[k] - us[(k + 1) % 4], vs[k] - vs[(k + 1) % 4]) for k in range(4)]
    good &= np.minimum.reduce(sides) >= cam.sl_min

    sub = np.nonzero(good)[0]
    if len(sub):
        a, b = scene.obstacle_edges()
        foot = camera_centers(batch.take(idx[sub]), cam)[:, :2]
        # top and bottom corners share a footprint
        for k in (0, 1):
            clear = segments_clear(foot, np.broadcast_to(corners[k, :2], foot.shape), a, b)
            good[sub[~clear]] = False
            sub = sub[clear]
            foot = foot[clear]
            if len(sub) == 0:
                break

    ok[idx] = good
    sel = np.nonzero(good)[0]
    if len(sel):
        rows = [_jacobian_rows(qs[k][sel], pcs[k][sel], cam) for k in range(4)]
        fims[idx[sel]] = _fim_from_rows([r[0] for r in rows], [r[1] for r in rows], noise.sigma_px)
    return ok, fims


def detectable(t_vw: Pose, slot: Slot, size: float, scene: Scene, cam: CameraModel) -> bool:
    ok, _ = tag_fims_batch(PoseBatch.from_poses([t_vw]), slot, size, scene, cam, NoiseModel())
    return bool(ok[0])


def gated_tag_fim(t_vw: Pose, slot: Slot, size: float, scene: Scene, cam: CameraModel, noise: NoiseModel) -> np.ndarray:
    """Packed FIM of one tag at one pose; zeros when undetectable."""
    _, f = tag_fims_batch(PoseBatch.from_poses([t_vw]), slot, size, scene, cam, noise)
    return f[0]


def pose_fim(
    t_vw: Pose,
    active_slots: Sequence[tuple[int, Slot, float]],
    scene: Scene,
    cam: CameraModel,
    noise: NoiseModel,
) -> np.ndarray:
    """Sum of detectable tag FIMs at one pose.

    ``active_slots`` holds ``(slot_id, slot, size)``; accumulation follows
    ascending slot id so the result does not depend on input order.
    """
    total = np.zeros(N_TRIU)
    for _, slot, size in sorted(active_slots, key=lambda s: (s[0], s[2])):
        total += gated_tag_fim(t_vw, slot, size, scene, cam, noise)
    return unpack_fim(total)


# ------------------------------------------------------------------ metrics


def metric_batch(packed: np.ndarray, kind: str) -> np.ndarray:
    """Scalar localizability of each packed FIM row; zero rows map to 0."""
    packed = np.asarray(packed, dtype=float).reshape(-1, N_TRIU)
    if kind == "trace":
        diag = np.nonzero(TRIU_I == TRIU_J)[0]
        return packed[:, diag].sum(axis=1)
    out = np.zeros(len(packed))
    nz = np.nonzero(np.any(packed != 0.0, axis=1))[0]
    if len(nz) == 0:
        return out
    mats = unpack_fim(packed[nz])
    if kind == "mineig":
        out[nz] = np.maximum(np.linalg.eigvalsh(mats)[:, 0], 0.0)
    elif kind == "logdet":
        out[nz] = np.log1p(np.maximum(np.linalg.det(mats), 0.0))
    else:
        raise ValueError(f"unknown metric kind {kind!r}; expected one of {METRIC_KINDS}")
    return out


def metric(f, kind: str = "trace") -> float:
    f = np.asarray(f, dtype=float)
    packed = pack_fim(f) if f.shape == (6, 6) else f
    if kind not in METRIC_KINDS:
        raise ValueError(f"unknown metric kind {kind!r}; expected one of {METRIC_KINDS}")
    return float(metric_batch(packed, kind)[0])
