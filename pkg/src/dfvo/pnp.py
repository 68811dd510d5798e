"""Perspective-n-Point: pose from 3D points in frame i and their pixels in frame i-1.

The recovered transform maps frame-i points into frame i-1, i.e. it is
already the tracker's relative pose ``T^{i-1}_i``; the reprojection model is
``p_prev ~ K (R X + t)`` with no inversion at the module boundary.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateConfiguration, TooFewCorrespondences
from .geometry import CameraIntrinsics, RigidTransform, backproject, nearest_rotation, normalize
from .io import DepthMap
from .matching import MatchSet
from .ransac import PnPRansacParams, required_iterations

SAMPLE_SIZE = 6


@dataclass(frozen=True, eq=False)
class Correspondences3D2D:
    """``points`` (N, 3) in frame i, ``pixels`` (N, 2) in frame i-1.

    ``match_index`` points back into the MatchSet the rows came from.
    """

    points: np.ndarray
    pixels: np.ndarray
    match_index: np.ndarray

    def __len__(self) -> int:
        return len(self.points)


def build_3d2d(depth: DepthMap, matches: MatchSet, K: CameraIntrinsics) -> Correspondences3D2D:
    """Lift each match's current pixel with its nearest-pixel depth; drop invalid depth."""
    u = np.rint(matches.p_cur[:, 0]).astype(np.intp)
    v = np.rint(matches.p_cur[:, 1]).astype(np.intp)
    inside = (u >= 0) & (u < depth.width) & (v >= 0) & (v < depth.height)
    if not inside.all():
        raise ValueError("matches fall outside the depth map")
    d = depth.data[v, u].astype(np.float64)
    keep = np.flatnonzero(d > 0)
    if len(keep) < SAMPLE_SIZE:
        raise TooFewCorrespondences(f"{len(keep)} matches have valid depth, need {SAMPLE_SIZE}")
    X = backproject(K, matches.p_cur[keep], d[keep])
    return Correspondences3D2D(X, matches.p_prev[keep].copy(), keep)


def _project_points(T: RigidTransform, K: CameraIntrinsics, X: np.ndarray):
    Y = X @ T.rotation.T + T.translation
    z = Y[:, 2]
    front = z > 1e-9
    zs = np.where(front, z, 1.0)
    uv = np.stack([K.fx * Y[:, 0] / zs + K.cx, K.fy * Y[:, 1] / zs + K.cy], axis=1)
    return uv, Y, front


def reprojection_residuals(T: RigidTransform, K: CameraIntrinsics, corrs: Correspondences3D2D) -> np.ndarray:
    """Pixel distance between ``project(K, R X + t)`` and the observed pixel; +inf behind the camera."""
    uv, _, front = _project_points(T, K, corrs.points)
    r = np.linalg.norm(uv - corrs.pixels, axis=1)
    return np.where(front, r, np.inf)


def pnp_jacobian(T: RigidTransform, K: CameraIntrinsics, X: np.ndarray) -> np.ndarray:
    """d(projected pixel)/d(twist), shape (N, 2, 6), for a left perturbation ``exp(xi) T``.

    Twist ordering is ``(rho, omega)``.
    """
    Y = X @ T.rotation.T + T.translation
    x, y, z = Y[:, 0], Y[:, 1], Y[:, 2]
    n = len(Y)
    Jp = np.zeros((n, 2, 3))
    Jp[:, 0, 0] = K.fx / z
    Jp[:, 0, 2] = -K.fx * x / z**2
    Jp[:, 1, 1] = K.fy / z
    Jp[:, 1, 2] = -K.fy * y / z**2
    # dY/domega = -[Y]_x
    negskew = np.zeros((n, 3, 3))
    negskew[:, 0, 1], negskew[:, 0, 2] = z, -y
    negskew[:, 1, 0], negskew[:, 1, 2] = -z, x
    negskew[:, 2, 0], negskew[:, 2, 1] = y, -x
    return np.concatenate([Jp, Jp @ negskew], axis=2)


def _sq_cost(T, K, X, p) -> float:
    uv, _, front = _project_points(T, K, X)
    if not front.all():
        return np.inf
    return float(np.sum((uv - p) ** 2))


def refine_pose(T: RigidTransform, K: CameraIntrinsics, X: np.ndarray, p: np.ndarray,
                max_iterations: int = 20, step_tol: float = 1e-10) -> RigidTransform:
    """Gauss-Newton on the summed squared reprojection error.

    Steps that would raise the cost are halved (up to 20 times) and the
    iteration stops if none helps, so the cost never increases.
    """
    cost = _sq_cost(T, K, X, p)
    if not np.isfinite(cost):
        return T
    for _ in range(max_iterations):
        uv, _, _ = _project_points(T, K, X)
        r = (uv - p).reshape(-1)
        J = pnp_jacobian(T, K, X).reshape(-1, 6)
        delta = np.linalg.lstsq(J, -r, rcond=None)[0]
        step = 1.0
        for _ in range(20):
            cand = RigidTransform.exp(step * delta) @ T
            new_cost = _sq_cost(cand, K, X, p)
            if new_cost <= cost:
                break
            step *= 0.5
        else:
            break
        T, cost = cand, new_cost
        if np.linalg.norm(step * delta) < step_tol:
            break
    return T


def dlt_pose(X: np.ndarray, x: np.ndarray) -> RigidTransform | None:
    """Linear pose from >= 6 points ``X`` and normalized image points ``x``.

    Returns None for degenerate (e.g. coplanar) samples or when the recovered
    pose puts most points behind the camera.
    """
    c = X.mean(axis=0)
    d = np.linalg.norm(X - c, axis=1).mean()
    if d <= 0:
        return None
    s = np.sqrt(3.0) / d
    Xh = np.hstack([(X - c) * s, np.ones((len(X), 1))])
    n = len(X)
    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = Xh
    A[0::2, 8:12] = -x[:, 0:1] * Xh
    A[1::2, 4:8] = Xh
    A[1::2, 8:12] = -x[:, 1:2] * Xh
    _, S, Vt = np.linalg.svd(A, full_matrices=len(A) < 12)
    if S[-2] <= 1e-8 * S[0]:
        return None
    Pn = Vt[-1].reshape(3, 4)
    N = np.eye(4)
    N[:3, :3] *= s
    N[:3, 3] = -s * c
    P = Pn @ N
    M = P[:, :3]
    if np.linalg.det(M) < 0:
        P = -P
        M = -M
    U, Sm, Vt = np.linalg.svd(M)
    lam = Sm.mean()
    if lam <= 0 or not np.isfinite(lam):
        return None
    R = nearest_rotation(U @ Vt)
    t = P[:, 3] / lam
    z = X @ R[2] + t[2]
    if np.count_nonzero(z > 0) * 2 <= len(z):
        return None
    return RigidTransform(R, t)


def solve_pnp_ransac(corrs: Correspondences3D2D, K: CameraIntrinsics,
                     params: PnPRansacParams = PnPRansacParams(),
                     seed: int = 0) -> tuple[RigidTransform, np.ndarray]:
    """6-point DLT hypotheses scored by reprojection error, then Gauss-Newton on the inliers."""
    n = len(corrs)
    if n < SAMPLE_SIZE:
        raise TooFewCorrespondences(f"PnP needs {SAMPLE_SIZE} correspondences, got {n}")
    x = normalize(K, corrs.pixels)
    rng = np.random.default_rng(seed)
    best_count, best_T = 0, None
    needed = params.max_iterations
    it = 0
    while it < min(needed, params.max_iterations):
        it += 1
        sample = rng.choice(n, SAMPLE_SIZE, replace=False)
        T = dlt_pose(corrs.points[sample], x[sample])
        if T is None:
            continue
        count = int(np.count_nonzero(reprojection_residuals(T, K, corrs) < params.px_threshold))
        if count > best_count:
            best_count, best_T = count, T
            needed = required_iterations(count / n, SAMPLE_SIZE, params.confidence, params.max_iterations)

    if best_count < SAMPLE_SIZE:
        raise DegenerateConfiguration(f"no PnP hypothesis reached {SAMPLE_SIZE} inliers")
    mask = reprojection_residuals(best_T, K, corrs) < params.px_threshold
    T = refine_pose(best_T, K, corrs.points[mask], corrs.pixels[mask],
                    params.gn_max_iterations, params.gn_step_tol)
    mask = reprojection_residuals(T, K, corrs) < params.px_threshold
    return T, mask
