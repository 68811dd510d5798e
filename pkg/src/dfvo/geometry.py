"""Rigid-body transforms and the pinhole camera.

Pose convention used throughout the package: a relative pose ``T^{i-1}_i``
maps points expressed in frame ``i`` into frame ``i-1``, so that chaining
``T_i = T_{i-1} @ T^{i-1}_i`` yields camera-to-world poses.

Pixels and 3D points are plain numpy arrays, shape ``(2,)``/``(N, 2)`` and
``(3,)``/``(N, 3)``. Angles are radians internally; anything reported to a
user is converted to degrees at the boundary.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateDepth

# re-projection onto SO(3) kicks in once drift exceeds this (Frobenius of R^T R - I)
ORTHO_DRIFT_TOL = 1e-7
_CONSTRUCT_TOL = 1e-6
_MIN_DEPTH = 1e-9


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def orthonormality_error(R: np.ndarray) -> float:
    return float(np.linalg.norm(R.T @ R - np.eye(3)))


def nearest_rotation(M: np.ndarray) -> np.ndarray:
    """Closest proper rotation to ``M`` in Frobenius norm (polar decomposition)."""
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def so3_exp(omega: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(omega))
    W = skew(omega)
    if theta < 1e-8:
        return np.eye(3) + W + 0.5 * W @ W
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * W + b * W @ W


def so3_log(R: np.ndarray) -> np.ndarray:
    angle = rotation_angle(R)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if angle < 1e-8:
        return 0.5 * w
    if np.pi - angle < 1e-6:
        # near pi: axis from the symmetric part
        B = 0.5 * (R + np.eye(3))
        axis = np.sqrt(np.clip(np.diag(B), 0.0, None))
        k = int(np.argmax(axis))
        axis[k] = np.sqrt(B[k, k])
        for j in range(3):
            if j != k:
                axis[j] = B[k, j] / axis[k]
        axis /= np.linalg.norm(axis)
        return angle * axis
    return angle / (2.0 * np.sin(angle)) * w


def rotation_angle(R: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, radians.

    Uses atan2 of the skew and trace parts, which stays accurate for tiny
    angles where ``arccos`` of the trace loses precision.
    """
    s = 0.5 * np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    c = 0.5 * (np.trace(R) - 1.0)
    return float(np.arctan2(s, c))


def _readonly(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """SE(3) element ``x -> R x + t``.

    ``rotation`` is 3x3 orthonormal with det +1, ``translation`` is in meters.
    Instances are immutable; the underlying arrays are read-only.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = _readonly(self.rotation)
        t = _readonly(self.translation).reshape(-1)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValueError(f"bad pose shapes {R.shape}, {t.shape}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("pose contains non-finite values")
        if orthonormality_error(R) > _CONSTRUCT_TOL or np.linalg.det(R) <= 0:
            raise ValueError("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    @classmethod
    def from_translation(cls, x: float, y: float, z: float) -> RigidTransform:
        return cls(np.eye(3), np.array([x, y, z], dtype=float))

    @classmethod
    def from_matrix(cls, M) -> RigidTransform:
        """Build from a 3x4 or 4x4 ``[R|t]`` matrix."""
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    @classmethod
    def exp(cls, xi) -> RigidTransform:
        """SE(3) exponential of a twist ``(rho, omega)``."""
        xi = np.asarray(xi, dtype=float)
        rho, omega = xi[:3], xi[3:]
        theta = float(np.linalg.norm(omega))
        W = skew(omega)
        if theta < 1e-8:
            V = np.eye(3) + 0.5 * W + W @ W / 6.0
        else:
            V = (np.eye(3) + (1.0 - np.cos(theta)) / theta**2 * W
                 + (theta - np.sin(theta)) / theta**3 * W @ W)
        return cls(so3_exp(omega), V @ rho)

    @property
    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def compose(self, other: RigidTransform) -> RigidTransform:
        return compose(self, other)

    def inverse(self) -> RigidTransform:
        return inverse(self)

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return compose(self, other)

    def apply(self, points) -> np.ndarray:
        """Transform ``(3,)`` or ``(N, 3)`` points."""
        P = np.asarray(points, dtype=float)
        return P @ self.rotation.T + self.translation

    def allclose(self, other: RigidTransform, atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
                    and np.allclose(self.translation, other.translation, rtol=0, atol=atol))

    def __repr__(self) -> str:
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    R = a.rotation @ b.rotation
    if orthonormality_error(R) > ORTHO_DRIFT_TOL:
        R = nearest_rotation(R)
    return RigidTransform(R, a.rotation @ b.translation + a.translation)


def inverse(T: RigidTransform) -> RigidTransform:
    Rt = T.rotation.T
    return RigidTransform(Rt, -Rt @ T.translation)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels, plus the image size they apply to."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(np.isfinite(vals)):
            raise ValueError("intrinsics must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0 or int(self.width) != self.width or int(self.height) != self.height:
            raise ValueError(f"bad image size {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def size(self) -> tuple[int, int]:
        return int(self.width), int(self.height)


def project(K: CameraIntrinsics, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    z = X[..., 2]
    if np.any(z <= _MIN_DEPTH):
        raise DegenerateDepth("point at or behind the camera plane (z <= 1e-9)")
    u = K.fx * X[..., 0] / z + K.cx
    v = K.fy * X[..., 1] / z + K.cy
    return np.stack([u, v], axis=-1)


def backproject(K: CameraIntrinsics, p, d) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise DegenerateDepth("depth must be positive")
    xy = normalize(K, p)
    return np.stack([xy[..., 0] * d, xy[..., 1] * d, np.broadcast_to(d, xy.shape[:-1])], axis=-1)


def normalize(K: CameraIntrinsics, p) -> np.ndarray:
    """Apply ``K^-1`` to pixels, dropping the homogeneous 1."""
    p = np.asarray(p, dtype=float)
    return np.stack([(p[..., 0] - K.cx) / K.fx, (p[..., 1] - K.cy) / K.fy], axis=-1)


def homogeneous(x: np.ndarray) -> np.ndarray:
    return np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1)
