"""Rigid-body (SE(3)) helpers used by the measurement model.

Conventions
-----------
* A :class:`Pose` ``T = (C, r)`` maps a point expressed in the world frame into
  the body frame: ``p_body = C @ p_world + r``.
* Tangent vectors are ordered ``xi = [rho; phi]`` (translation first, rotation
  second), matching the column order of :func:`odot`.
* Perturbations are applied on the left: ``T' = exp(xi^) T``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_SMALL_ANGLE = 1e-8
_ORTHO_TOL = 1e-7


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Pose:
    """World-to-body rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        c = _frozen(self.rotation)
        r = _frozen(self.translation).reshape(3)
        if c.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {c.shape}")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(r))):
            raise ValueError("pose entries must be finite")
        object.__setattr__(self, "rotation", c)
        object.__setattr__(self, "translation", r)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_position_yaw(cls, position, yaw_rad: float) -> "Pose":
        """Pose of a level body at ``position`` (world) heading ``yaw_rad``.

        The body x axis points along the heading, z points up.
        """
        c, s = np.cos(yaw_rad), np.sin(yaw_rad)
        body_to_world = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        rot = body_to_world.T
        return cls(rot, -rot @ np.asarray(position, dtype=float))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def origin_in_world(self) -> np.ndarray:
        """Position of the body origin expressed in the world frame."""
        return -self.rotation.T @ self.translation

    def is_valid(self, tol: float = 1e-9) -> bool:
        c = self.rotation
        return bool(
            np.max(np.abs(c.T @ c - np.eye(3))) <= tol
            and abs(np.linalg.det(c) - 1.0) <= tol
        )

    def __repr__(self) -> str:
        return f"Pose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def skew(v) -> np.ndarray:
    """3x3 skew-symmetric matrix such that ``skew(v) @ w == cross(v, w)``."""
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def hat(xi) -> np.ndarray:
    """4x4 se(3) matrix of ``xi = [rho; phi]``."""
    xi = np.asarray(xi, dtype=float).reshape(6)
    m = np.zeros((4, 4))
    m[:3, :3] = skew(xi[3:])
    m[:3, 3] = xi[:3]
    return m


def odot(p) -> np.ndarray:
    """4x6 operator with ``odot(p) @ xi == hat(xi) @ p`` for homogeneous ``p``."""
    p = np.asarray(p, dtype=float).reshape(4)
    out = np.zeros((4, 6))
    out[:3, :3] = p[3] * np.eye(3)
    out[:3, 3:] = -skew(p[:3])
    return out


def homogeneous(p) -> np.ndarray:
    p = np.asarray(p, dtype=float).reshape(-1)
    if p.size == 4:
        if p[3] != 1.0:
            raise ValueError("homogeneous points must have last component 1")
        return p.copy()
    return np.append(p.reshape(3), 1.0)


def orthonormalize(c: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (polar decomposition via SVD)."""
    u, _, vt = np.linalg.svd(c)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1
        r = u @ vt
    return r


def compose(a: Pose, b: Pose) -> Pose:
    """``a ∘ b``: apply ``b`` first, then ``a``."""
    c = a.rotation @ b.rotation
    if np.max(np.abs(c.T @ c - np.eye(3))) > _ORTHO_TOL:
        c = orthonormalize(c)
    return Pose(c, a.rotation @ b.translation + a.translation)


def invert(a: Pose) -> Pose:
    ct = a.rotation.T
    return Pose(ct, -ct @ a.translation)


def apply(a: Pose, p) -> np.ndarray:
    """Transform a homogeneous (or 3-vector) point; returns a homogeneous point."""
    p = homogeneous(p)
    out = np.empty(4)
    out[:3] = a.rotation @ p[:3] + a.translation
    out[3] = 1.0
    return out


def _so3_terms(phi: np.ndarray):
    theta = float(np.linalg.norm(phi))
    wx = skew(phi)
    if theta < _SMALL_ANGLE:
        wx2 = wx @ wx
        rot = np.eye(3) + wx + 0.5 * wx2
        jac = np.eye(3) + 0.5 * wx + wx2 / 6.0
        return rot, jac
    a = phi / theta
    ax = skew(a)
    aa = np.outer(a, a)
    s, c = np.sin(theta), np.cos(theta)
    rot = c * np.eye(3) + (1.0 - c) * aa + s * ax
    jac = (s / theta) * np.eye(3) + (1.0 - s / theta) * aa + ((1.0 - c) / theta) * ax
    return rot, jac


def exp_se3(xi) -> Pose:
    xi = np.asarray(xi, dtype=float).reshape(6)
    rot, jac = _so3_terms(xi[3:])
    return Pose(rot, jac @ xi[:3])


def exp_se3_series(xi, terms: int = 4) -> Pose:
    """Truncated power series of the matrix exponential (reference only)."""
    x = hat(xi)
    m = np.eye(4)
    term = np.eye(4)
    for k in range(1, terms + 1):
        term = term @ x / k
        m = m + term
    return Pose.from_matrix(m)


def log_se3(t: Pose) -> np.ndarray:
    """Inverse of :func:`exp_se3` for rotation angles below pi."""
    c = t.rotation
    cos_theta = np.clip((np.trace(c) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    if theta < _SMALL_ANGLE:
        phi = 0.5 * np.array([c[2, 1] - c[1, 2], c[0, 2] - c[2, 0], c[1, 0] - c[0, 1]])
        px = skew(phi)
        jinv = np.eye(3) - 0.5 * px + px @ px / 12.0
    else:
        w = np.array([c[2, 1] - c[1, 2], c[0, 2] - c[2, 0], c[1, 0] - c[0, 1]])
        a = w / (2.0 * np.sin(theta))
        phi = theta * a
        half = 0.5 * theta
        cot = half / np.tan(half)
        jinv = cot * np.eye(3) + (1.0 - cot) * np.outer(a, a) - half * skew(a)
    return np.concatenate([jinv @ t.translation, phi])


def perturb_left(t: Pose, xi) -> Pose:
    """``exp(xi^) ∘ t``."""
    return compose(exp_se3(xi), t)


def rot_z(yaw_rad: float) -> np.ndarray:
    c, s = np.cos(yaw_rad), np.sin(yaw_rad)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
