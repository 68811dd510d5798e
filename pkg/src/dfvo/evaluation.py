"""Trajectory metrics: ATE, RPE, KITTI sub-sequence errors, and Sim(3)/SE(3) alignment."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DegenerateGeometry, InvalidConfig, SequenceTooShort
from .geometry import RigidTransform, inverse, rotation_angle
from .io import Trajectory
from .validation import as_trajectory, check_points, check_trajectory_pair

logger = logging.getLogger(__name__)

KITTI_LENGTHS = (100, 200, 300, 400, 500, 600, 700, 800)


@dataclass(frozen=True, eq=False)
class AlignmentResult:
    """``gt ~ scale * rotation @ pred + translation`` for positions."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    residual_rmse: float

    def apply_points(self, P) -> np.ndarray:
        return self.scale * np.asarray(P, dtype=float) @ self.rotation.T + self.translation

    def apply(self, traj) -> Trajectory:
        """Map every pose of ``traj`` into the ground-truth frame."""
        traj = as_trajectory(traj)
        return Trajectory(
            RigidTransform(self.rotation @ T.rotation, self.apply_points(T.translation))
            for T in traj)


def umeyama(src: np.ndarray, dst: np.ndarray, with_scale: bool = True):
    """Least-squares ``(s, R, t)`` with ``dst ~ s R src + t`` (Umeyama, 1991)."""
    src = check_points(src, 3, "src")
    dst = check_points(dst, 3, "dst")
    if len(src) != len(dst):
        raise ValueError("point sets differ in length")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    cov = xd.T @ xs / len(src)
    U, D, Vt = np.linalg.svd(cov)
    if D[0] <= 0 or D[1] <= 1e-10 * D[0]:
        raise DegenerateGeometry("positions are collinear or coincident; rotation is undetermined")
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    if with_scale:
        var_s = np.mean(np.sum(xs**2, axis=1))
        s = float(np.trace(np.diag(D) @ S) / var_s)
    else:
        s = 1.0
    t = mu_d - s * R @ mu_s
    return s, R, t


def umeyama_align(pred, gt, with_scale: bool = True) -> AlignmentResult:
    """Closed-form alignment of predicted positions onto ground truth (7DoF or 6DoF)."""
    pred, gt = check_trajectory_pair(pred, gt, min_length=3)
    P, G = pred.positions, gt.positions
    s, R, t = umeyama(P, G, with_scale)
    resid = s * P @ R.T + t - G
    rmse = float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))
    return AlignmentResult(s, R, t, rmse)


def ate(pred, gt) -> float:
    """RMSE of per-frame position differences. No alignment is applied."""
    pred, gt = check_trajectory_pair(pred, gt)
    d = pred.positions - gt.positions
    return float(np.sqrt(np.mean(np.sum(d**2, axis=1))))


def _relative(traj: Trajectory, i: int, j: int) -> RigidTransform:
    return inverse(traj[i]) @ traj[j]


def rpe(pred, gt) -> tuple[float, float]:
    """Mean frame-to-frame relative pose error: ``(meters, degrees)``."""
    pred, gt = check_trajectory_pair(pred, gt, min_length=2)
    t_err, r_err = [], []
    for i in range(1, len(gt)):
        E = inverse(_relative(gt, i - 1, i)) @ _relative(pred, i - 1, i)
        t_err.append(np.linalg.norm(E.translation))
        r_err.append(rotation_angle(E.rotation))
    return float(np.mean(t_err)), float(np.degrees(np.mean(r_err)))


def path_distances(traj: Trajectory) -> np.ndarray:
    P = traj.positions
    steps = np.linalg.norm(np.diff(P, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


@dataclass(frozen=True)
class KittiErrors:
    t_err: float  # percent
    r_err: float  # degrees per 100 m
    per_length: dict = field(default_factory=dict)  # L -> (t_err, r_err, n)
    n_segments: int = 0


def kitti_odometry_errors(pred, gt, stride: int = 10, lengths=KITTI_LENGTHS) -> KittiErrors:
    """Average errors over all sub-sequences of the given path lengths.

    For each start frame (every ``stride`` frames) and length ``L``, the end
    frame is the first whose ground-truth path distance from the start is at
    least ``L``. Translational error is ``|t_pred - t_gt| / L`` in percent and
    rotational error ``angle(R_gt^T R_pred) / L`` in degrees per 100 m, using
    the relative transforms across the sub-sequence.
    """
    pred, gt = check_trajectory_pair(pred, gt, min_length=2)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    dist = path_distances(gt)
    if dist[-1] < min(lengths):
        raise SequenceTooShort(f"ground-truth path is {dist[-1]:.3f} m, need >= {min(lengths)} m")
    per = {L: ([], []) for L in lengths}
    for first in range(0, len(gt), stride):
        for L in lengths:
            hits = np.flatnonzero(dist >= dist[first] + L)
            if len(hits) == 0:
                continue
            last = int(hits[0])
            rel_gt = _relative(gt, first, last)
            rel_pred = _relative(pred, first, last)
            te = np.linalg.norm(rel_pred.translation - rel_gt.translation) / L
            re = rotation_angle(rel_gt.rotation.T @ rel_pred.rotation) / L
            per[L][0].append(te)
            per[L][1].append(re)
    all_t = np.array([v for L in lengths for v in per[L][0]])
    all_r = np.array([v for L in lengths for v in per[L][1]])
    if len(all_t) == 0:
        raise SequenceTooShort("no complete sub-sequence found")
    breakdown = {L: (100.0 * float(np.mean(t)), 100.0 * float(np.degrees(np.mean(r))), len(t))
                 for L, (t, r) in per.items() if t}
    return KittiErrors(100.0 * float(np.mean(all_t)), 100.0 * float(np.degrees(np.mean(all_r))),
                       breakdown, len(all_t))


class TrajectoryAligner(TransformerMixin, BaseEstimator):
    """Umeyama alignment as a transformer.

    ``fit(pred, gt)`` estimates the similarity (``with_scale=True``, 7DoF) or
    rigid (6DoF) transform; ``transform`` maps trajectories or ``(N, 3)``
    position arrays into the ground-truth frame.
    """

    def __init__(self, with_scale=True):
        self.with_scale = with_scale

    def fit(self, X, y):
        res = umeyama_align(X, y, self.with_scale)
        self.scale_ = res.scale
        self.rotation_ = res.rotation
        self.translation_ = res.translation
        self.residual_rmse_ = res.residual_rmse
        return self

    @property
    def result_(self) -> AlignmentResult:
        check_is_fitted(self, "rotation_")
        return AlignmentResult(self.scale_, self.rotation_, self.translation_, self.residual_rmse_)

    def transform(self, X):
        res = self.result_
        if isinstance(X, np.ndarray) and X.ndim == 2:
            return res.apply_points(check_points(X, 3))
        return res.apply(X)


ALIGN_MODES = ("6dof", "7dof", "none")


def evaluate(pred, gt, align: str = "7dof", stride: int = 10) -> dict:
    """Full metric set. KITTI errors are NaN when the path is shorter than 100 m."""
    if align not in ALIGN_MODES:
        raise InvalidConfig(f"align must be one of {ALIGN_MODES}, got {align!r}")
    pred, gt = check_trajectory_pair(pred, gt)
    report: dict = {}
    if align != "none":
        res = umeyama_align(pred, gt, with_scale=(align == "7dof"))
        pred = res.apply(pred)
        report["align_scale"] = res.scale
    try:
        k = kitti_odometry_errors(pred, gt, stride)
        t_err, r_err, per_length = k.t_err, k.r_err, k.per_length
    except SequenceTooShort as exc:
        logger.warning("KITTI errors skipped: %s", exc)
        t_err, r_err, per_length = float("nan"), float("nan"), {}
    rpe_m, rpe_deg = rpe(pred, gt) if len(gt) >= 2 else (0.0, 0.0)
    report.update(t_err=t_err, r_err=r_err, ate=ate(pred, gt), rpe_m=rpe_m, rpe_deg=rpe_deg)
    report["per_length"] = per_length
    return report


def write_report(report: dict, path) -> Path:
    """Write ``metric,value`` rows, plus a per-length table next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write("metric,value\n")
        for key in ("t_err", "r_err", "ate", "rpe_m", "rpe_deg", "align_scale"):
            if key in report:
                fh.write(f"{key},{report[key]:.9g}\n")
    per_path = path.with_name(path.stem + "_per_length.csv")
    with open(per_path, "w", newline="\n") as fh:
        fh.write("length_m,t_err,r_err,n_segments\n")
        for L, (t, r, n) in sorted(report.get("per_length", {}).items()):
            fh.write(f"{L},{t:.9g},{r:.9g},{n}\n")
    return per_path
