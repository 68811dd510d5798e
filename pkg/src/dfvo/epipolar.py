"""Essential-matrix estimation, decomposition, cheirality and triangulation.

Matches relate frame ``i`` (current) to frame ``i-1`` (previous). With
normalized coordinates ``x_cur``, ``x_prev`` and the relative pose
``X_prev = R X_cur + t`` the essential matrix ``E = [t]_x R`` satisfies
``x_prev^T E x_cur = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import AmbiguousCheirality, DegenerateConfiguration, TooFewMatches, ZeroBaseline
from .geometry import CameraIntrinsics, RigidTransform, homogeneous, normalize, skew
from .matching import MatchSet
from .ransac import EssentialRansacParams, required_iterations

SAMPLE_SIZE = 8
MIN_PARALLAX_DEG = 0.05
# relative size of the 8th singular value of the 8-point system below which the
# null space is treated as multi-dimensional (e.g. all points on one plane)
DEGENERACY_TOL = 1e-8

_W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class EpipolarResult:
    rotation: np.ndarray
    t_unit: np.ndarray
    inlier_mask: np.ndarray
    cheirality_count: int
    candidate_counts: tuple[int, ...] = ()
    essential: np.ndarray | None = None

    @property
    def n_inliers(self) -> int:
        return int(np.count_nonzero(self.inlier_mask))

    def pose(self, scale: float = 1.0) -> RigidTransform:
        return RigidTransform(self.rotation, scale * self.t_unit)


def _hartley(x: np.ndarray) -> np.ndarray:
    """Similarity moving points to zero mean and mean distance sqrt(2)."""
    c = x.mean(axis=0)
    d = np.linalg.norm(x - c, axis=1).mean()
    s = np.sqrt(2.0) / d if d > 0 else 1.0
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def project_to_essential(M: np.ndarray) -> np.ndarray:
    """Replace singular values (s1, s2, s3) by (m, m, 0), m = (s1+s2)/2, then scale to norm sqrt(2)."""
    U, S, Vt = np.linalg.svd(M)
    m = 0.5 * (S[0] + S[1])
    E = U @ np.diag([m, m, 0.0]) @ Vt
    E *= np.sqrt(2.0) / np.linalg.norm(E)
    # fix the overall sign so results do not depend on LAPACK conventions
    k = np.argmax(np.abs(E))
    return E if E.flat[k] > 0 else -E


def eight_point(x_cur: np.ndarray, x_prev: np.ndarray) -> np.ndarray | None:
    """Normalized 8-point essential matrix from >= 8 normalized correspondences.

    Returns None when the linear system has a multi-dimensional null space.
    """
    T1, T2 = _hartley(x_cur), _hartley(x_prev)
    a = homogeneous(x_cur) @ T1.T
    b = homogeneous(x_prev) @ T2.T
    A = (b[:, :, None] * a[:, None, :]).reshape(len(a), 9)
    _, S, Vt = np.linalg.svd(A, full_matrices=len(A) < 9)
    if len(S) < 8 or S[7] <= DEGENERACY_TOL * S[0]:
        return None
    F = Vt[-1].reshape(3, 3)
    M = T2.T @ F @ T1
    if not np.all(np.isfinite(M)) or np.linalg.norm(M) == 0:
        return None
    return project_to_essential(M)


def sampson_distance(E: np.ndarray, x_cur: np.ndarray, x_prev: np.ndarray) -> np.ndarray:
    """First-order geometric epipolar error, in normalized image units."""
    a = homogeneous(x_cur)
    b = homogeneous(x_prev)
    Ea = a @ E.T
    Etb = b @ E
    num = np.abs(np.sum(b * Ea, axis=1))
    den = np.sqrt(Ea[:, 0] ** 2 + Ea[:, 1] ** 2 + Etb[:, 0] ** 2 + Etb[:, 1] ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / den, np.inf)


def estimate_essential_ransac(matches: MatchSet, K: CameraIntrinsics,
                              params: EssentialRansacParams = EssentialRansacParams(),
                              seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """RANSAC over 8-point hypotheses, then a refit on all inliers.

    Returns ``(E, inlier_mask)``. Hypotheses are drawn from
    ``numpy.random.default_rng(seed)`` so the result is reproducible; the
    winner is the first hypothesis reaching the highest inlier count.
    """
    n = len(matches)
    if n < SAMPLE_SIZE:
        raise TooFewMatches(f"essential matrix needs {SAMPLE_SIZE} matches, got {n}")
    x_cur = normalize(K, matches.p_cur)
    x_prev = normalize(K, matches.p_prev)
    rng = np.random.default_rng(seed)

    best_count, best_mask = 0, None
    needed = params.max_iterations
    it = 0
    while it < min(needed, params.max_iterations):
        it += 1
        sample = rng.choice(n, SAMPLE_SIZE, replace=False)
        E = eight_point(x_cur[sample], x_prev[sample])
        if E is None:
            continue
        mask = sampson_distance(E, x_cur, x_prev) < params.threshold
        count = int(mask.sum())
        if count > best_count:
            best_count, best_mask = count, mask
            needed = required_iterations(count / n, SAMPLE_SIZE, params.confidence, params.max_iterations)

    if best_count < SAMPLE_SIZE:
        raise DegenerateConfiguration(f"best essential hypothesis has {best_count} inliers")

    E = eight_point(x_cur[best_mask], x_prev[best_mask])
    if E is None:
        raise DegenerateConfiguration("inlier set is degenerate for the 8-point refit")
    mask = sampson_distance(E, x_cur, x_prev) < params.threshold
    if mask.sum() < SAMPLE_SIZE:
        raise DegenerateConfiguration("refit model lost its inliers")
    return E, mask


def decompose_essential(E: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """The four ``(R, t_unit)`` candidates: ``{R_a, R_b} x {+t, -t}``."""
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    Ra = U @ _W @ Vt
    Rb = U @ _W.T @ Vt
    t = U[:, 2] / np.linalg.norm(U[:, 2])
    return [(Ra, t), (Ra, -t), (Rb, t), (Rb, -t)]


def triangulate_normalized(x_cur: np.ndarray, x_prev: np.ndarray, R: np.ndarray, t: np.ndarray,
                           min_parallax_deg: float = MIN_PARALLAX_DEG):
    """Linear two-view triangulation in normalized coordinates.

    Returns ``(depth_cur, depth_prev, valid)``: depths in frame i and i-1 and
    a mask of points in front of both cameras with enough parallax.
    """
    n = len(x_cur)
    A = np.zeros((n, 4, 4))
    # current camera is [I | 0]
    A[:, 0, 0] = -1.0
    A[:, 0, 2] = x_cur[:, 0]
    A[:, 1, 1] = -1.0
    A[:, 1, 2] = x_cur[:, 1]
    P = np.hstack([R, t[:, None]])
    A[:, 2] = x_prev[:, 0:1] * P[2] - P[0]
    A[:, 3] = x_prev[:, 1:2] * P[2] - P[1]
    _, _, Vt = np.linalg.svd(A)
    Xh = Vt[:, -1, :]
    w = Xh[:, 3]
    finite = np.abs(w) > 1e-12 * np.linalg.norm(Xh[:, :3], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        X = Xh[:, :3] / np.where(finite, w, 1.0)[:, None]
    depth_cur = X[:, 2]
    depth_prev = X @ R[2] + t[2]
    c_prev = -R.T @ t
    r1 = X
    r2 = X - c_prev
    with np.errstate(divide="ignore", invalid="ignore"):
        cosang = np.sum(r1 * r2, axis=1) / (np.linalg.norm(r1, axis=1) * np.linalg.norm(r2, axis=1))
        parallax = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
    valid = finite & (depth_cur > 0) & (depth_prev > 0) & (parallax >= min_parallax_deg)
    valid &= np.isfinite(depth_cur) & np.isfinite(depth_prev)
    return depth_cur, depth_prev, valid


def triangulate(matches: MatchSet, K: CameraIntrinsics, relative_pose: RigidTransform,
                min_parallax_deg: float = MIN_PARALLAX_DEG) -> tuple[np.ndarray, np.ndarray]:
    """Depths of the matched points in frame i under ``relative_pose`` (frame i -> i-1).

    Returns ``(depth, valid)``; invalid entries of ``depth`` are 0.
    """
    t = relative_pose.translation
    if np.linalg.norm(t) <= 1e-12:
        raise ZeroBaseline("relative pose has no translation")
    depth, _, valid = triangulate_normalized(
        normalize(K, matches.p_cur), normalize(K, matches.p_prev),
        relative_pose.rotation, t, min_parallax_deg)
    return np.where(valid, depth, 0.0), valid


def cheirality_select(candidates, matches: MatchSet, K: CameraIntrinsics,
                      inlier_mask: np.ndarray | None = None, margin: float = 0.1,
                      min_parallax_deg: float = MIN_PARALLAX_DEG,
                      essential: np.ndarray | None = None) -> EpipolarResult:
    """Keep the candidate with the most points in front of both cameras.

    Points with parallax below ``min_parallax_deg`` do not count for any
    candidate. Raises AmbiguousCheirality when the best count beats the
    runner-up by less than ``margin`` of the inliers.
    """
    if inlier_mask is None:
        inlier_mask = np.ones(len(matches), dtype=bool)
    inlier_mask = np.asarray(inlier_mask, dtype=bool)
    n_in = int(inlier_mask.sum())
    if n_in < 1:
        raise DegenerateConfiguration("no inliers to test cheirality on")
    x_cur = normalize(K, matches.p_cur[inlier_mask])
    x_prev = normalize(K, matches.p_prev[inlier_mask])
    counts = []
    for R, t in candidates:
        _, _, valid = triangulate_normalized(x_cur, x_prev, R, t, min_parallax_deg)
        counts.append(int(valid.sum()))
    order = sorted(range(len(counts)), key=lambda k: (-counts[k], k))
    best = order[0]
    runner_up = counts[order[1]] if len(order) > 1 else 0
    if counts[best] - runner_up < margin * n_in:
        raise AmbiguousCheirality(
            f"cheirality counts {counts} over {n_in} inliers do not single out a solution")
    R, t = candidates[best]
    return EpipolarResult(R, t, inlier_mask, counts[best], tuple(counts), essential)


def recover_pose(matches: MatchSet, K: CameraIntrinsics,
                 params: EssentialRansacParams = EssentialRansacParams(), seed: int = 0,
                 margin: float = 0.1, min_parallax_deg: float = MIN_PARALLAX_DEG) -> EpipolarResult:
    """Essential RANSAC, decomposition and cheirality selection in one call."""
    E, mask = estimate_essential_ransac(matches, K, params, seed)
    return cheirality_select(decompose_essential(E), matches, K, mask, margin, min_parallax_deg, E)


def essential_from_pose(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    return skew(np.asarray(t, dtype=float)) @ np.asarray(R, dtype=float)
