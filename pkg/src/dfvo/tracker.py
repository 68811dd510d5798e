"""Frame-to-frame tracking from depth and bidirectional flow.

Per frame pair (i, i-1):

1. forward-backward inconsistency of the flow, best-N matches;
2. if the mean flow magnitude exceeds ``delta_f``: essential matrix, cheirality
   selection, triangulation and scale from the provided depth, giving
   ``[R, s t_unit]``;
3. otherwise, or if step 2 fails, PnP on 3D-2D correspondences built from
   the depth of frame i;
4. if PnP also fails, the previous relative motion is reused.

Camera-to-world poses are chained as ``T_i = T_{i-1} @ T^{i-1}_i``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .epipolar import MIN_PARALLAX_DEG, recover_pose, triangulate
from .exceptions import InvalidConfig, TooFewMatches, VOError
from .geometry import CameraIntrinsics, RigidTransform, compose
from .io import DepthMap, FlowField, SequenceDir, Trajectory, write_trajectory
from .matching import fb_inconsistency, mean_flow_magnitude, select_best_n
from .pnp import build_3d2d, solve_pnp_ransac
from .ransac import EssentialRansacParams, PnPRansacParams, ScaleParams
from .scale import recover_scale
from .validation import check_pair_products

logger = logging.getLogger(__name__)

DIAG_SCHEMA = "# dfvo-diag v1"
DIAG_HEADER = "frame,branch,n_matches,n_inliers,cheirality,scale,mean_flow"


class Branch(str, Enum):
    ESSENTIAL_SCALED = "ESSENTIAL_SCALED"
    PNP = "PNP"
    FALLBACK_CONSTANT = "FALLBACK_CONSTANT"


@dataclass(frozen=True)
class TrackerConfig:
    delta_f: float = 5.0
    top_n: int = 2000
    border_px: int = 10
    selection_mode: str = "global"
    flow_gate: str = "field"
    cheirality_margin: float = 0.1
    min_parallax_deg: float = MIN_PARALLAX_DEG
    min_depth: float = 0.1
    max_depth: float = 200.0
    essential: EssentialRansacParams = field(default_factory=EssentialRansacParams)
    pnp: PnPRansacParams = field(default_factory=PnPRansacParams)
    scale: ScaleParams = field(default_factory=ScaleParams)
    rng_seed: int = 0

    def __post_init__(self):
        if not self.delta_f > 0:
            raise InvalidConfig("delta_f must be > 0")
        if self.top_n < 8:
            raise InvalidConfig("top_n must be >= 8")
        if self.selection_mode not in ("global", "uniform"):
            raise InvalidConfig(f"selection_mode must be 'global' or 'uniform', got {self.selection_mode!r}")
        if self.flow_gate not in ("field", "matches"):
            raise InvalidConfig(f"flow_gate must be 'field' or 'matches', got {self.flow_gate!r}")
        if not 0 <= self.min_depth < self.max_depth:
            raise InvalidConfig("need 0 <= min_depth < max_depth")

    # flat key <-> nested block mapping used by config files and the estimator
    _BLOCKS = {"essential": EssentialRansacParams, "pnp": PnPRansacParams, "scale": ScaleParams}

    @classmethod
    def flat_defaults(cls) -> dict:
        out = {}
        for f in fields(cls):
            if f.name in cls._BLOCKS:
                for sub in fields(cls._BLOCKS[f.name]):
                    out[f"{f.name}_{sub.name}"] = sub.default
            else:
                out[f.name] = f.default
        return out

    @classmethod
    def from_flat(cls, values: dict) -> TrackerConfig:
        unknown = set(values) - set(cls.flat_defaults())
        if unknown:
            raise InvalidConfig(f"unknown tracker key(s): {', '.join(sorted(unknown))}")
        top, blocks = {}, {name: {} for name in cls._BLOCKS}
        for key, val in values.items():
            for name in cls._BLOCKS:
                if key.startswith(name + "_"):
                    blocks[name][key[len(name) + 1:]] = val
                    break
            else:
                top[key] = val
        nested = {name: cls._BLOCKS[name](**kw) for name, kw in blocks.items()}
        return cls(**top, **nested)

    def to_flat(self) -> dict:
        out = {}
        for key, val in asdict(self).items():
            if isinstance(val, dict):
                out.update({f"{key}_{k}": v for k, v in val.items()})
            else:
                out[key] = val
        return out


@dataclass(frozen=True, eq=False)
class FrameResult:
    relative_pose: RigidTransform
    branch: Branch
    n_matches: int = 0
    n_inliers: int = 0
    cheirality_count: int = 0
    scale: float | None = None
    mean_flow: float = float("nan")
    note: str = ""


def _pair_seed(cfg: TrackerConfig, frame_index: int, stage: int) -> list[int]:
    return [cfg.rng_seed, frame_index, stage]


def _masked_depth(depth: DepthMap, cfg: TrackerConfig) -> DepthMap:
    d = depth.data
    keep = (d >= cfg.min_depth) & (d <= cfg.max_depth)
    return DepthMap(np.where(keep, d, 0).astype(np.float32))


def _essential_branch(depth, matches, K, cfg, frame_index):
    epi = recover_pose(matches, K, cfg.essential, _pair_seed(cfg, frame_index, 1),
                       cfg.cheirality_margin, cfg.min_parallax_deg)
    inl = matches.subset(epi.inlier_mask)
    tri, _ = triangulate(inl, K, epi.pose(), cfg.min_parallax_deg)
    u = np.rint(inl.p_cur[:, 0]).astype(np.intp)
    v = np.rint(inl.p_cur[:, 1]).astype(np.intp)
    est = recover_scale(depth.data[v, u], tri, cfg.scale, _pair_seed(cfg, frame_index, 2))
    return epi.pose(est.scale), epi, est


def track_pair(depth: DepthMap, fwd: FlowField, bwd: FlowField, K: CameraIntrinsics,
               cfg: TrackerConfig = TrackerConfig(), prev: FrameResult | None = None,
               frame_index: int = 1) -> FrameResult:
    """Relative pose ``T^{i-1}_i`` for one frame pair.

    Solver failures degrade essential -> PnP -> constant motion; only a size
    mismatch between the rasters and ``K`` is raised.
    """
    check_pair_products(K, depth, fwd, bwd)
    depth = _masked_depth(depth, cfg)
    fallback = prev.relative_pose if prev is not None else RigidTransform.identity()
    notes = []

    try:
        field_mean = mean_flow_magnitude(fwd)
    except VOError:
        field_mean = float("nan")
    try:
        err = fb_inconsistency(fwd, bwd)
        matches = select_best_n(fwd, err, cfg.top_n, cfg.border_px, cfg.selection_mode)
    except TooFewMatches as exc:
        return FrameResult(fallback, Branch.FALLBACK_CONSTANT, mean_flow=field_mean, note=exc.code)

    if cfg.flow_gate == "field":
        gate = field_mean
    else:
        gate = float(np.linalg.norm(matches.p_prev - matches.p_cur, axis=1).mean())

    if gate > cfg.delta_f:
        try:
            pose, epi, est = _essential_branch(depth, matches, K, cfg, frame_index)
            return FrameResult(pose, Branch.ESSENTIAL_SCALED, len(matches), epi.n_inliers,
                               epi.cheirality_count, est.scale, gate)
        except VOError as exc:
            notes.append(exc.code)
            logger.debug("frame %d: essential branch failed: %s", frame_index, exc)
    else:
        notes.append("FlowGate")

    try:
        corrs = build_3d2d(depth, matches, K)
        pose, mask = solve_pnp_ransac(corrs, K, cfg.pnp, _pair_seed(cfg, frame_index, 3))
        return FrameResult(pose, Branch.PNP, len(matches), int(mask.sum()), 0, None, gate, ";".join(notes))
    except VOError as exc:
        notes.append(exc.code)
        logger.debug("frame %d: PnP failed: %s", frame_index, exc)
    return FrameResult(fallback, Branch.FALLBACK_CONSTANT, len(matches), 0, 0, None, gate, ";".join(notes))


class DirectorySource:
    """Frame products read lazily from a sequence directory."""

    def __init__(self, root):
        self.seq = SequenceDir(root)
        self.K = self.seq.calibration()
        self.n_frames = self.seq.n_frames()
        self.seq.check_complete(self.n_frames)

    def pair(self, i: int):
        return self.seq.pair(i)


def _as_source(X):
    if isinstance(X, (str, Path)):
        return DirectorySource(X)
    if hasattr(X, "pair") and hasattr(X, "K") and hasattr(X, "n_frames"):
        return X
    raise TypeError("expected a sequence directory or an object with K, n_frames and pair(i)")


def track_sequence(source, cfg: TrackerConfig = TrackerConfig()) -> tuple[Trajectory, list[FrameResult]]:
    """Track every pair of ``source``; the first pose is identity."""
    source = _as_source(source)
    poses = [RigidTransform.identity()]
    results: list[FrameResult] = []
    prev = None
    for i in range(1, source.n_frames):
        depth, fwd, bwd = source.pair(i)
        res = track_pair(depth, fwd, bwd, source.K, cfg, prev, frame_index=i)
        results.append(res)
        poses.append(compose(poses[-1], res.relative_pose))
        prev = res
    return Trajectory(poses), results


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, float):
        return f"{x:.9g}"
    return str(x)


def diagnostics_rows(results: list[FrameResult], first_frame: int = 1) -> list[str]:
    return [",".join([str(first_frame + k), r.branch.value, str(r.n_matches), str(r.n_inliers),
                      str(r.cheirality_count), _fmt(r.scale), _fmt(r.mean_flow)])
            for k, r in enumerate(results)]


def write_diagnostics(results: list[FrameResult], path, append: bool = False, first_frame: int = 1) -> None:
    """Write one CSV row per tracked frame; with ``append`` the header is only written to a new file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fresh = not (append and path.exists() and path.stat().st_size > 0)
    with open(path, "a" if append else "w", newline="\n") as fh:
        if fresh:
            fh.write(DIAG_SCHEMA + "\n" + DIAG_HEADER + "\n")
        for row in diagnostics_rows(results, first_frame):
            fh.write(row + "\n")


def run_sequence(sequence_dir, cfg: TrackerConfig = TrackerConfig(), out_dir=None):
    """Track a sequence directory; with ``out_dir``, write ``poses_pred.txt`` and ``diagnostics.csv``."""
    traj, results = track_sequence(DirectorySource(sequence_dir), cfg)
    if out_dir is not None:
        out = Path(out_dir)
        write_trajectory(traj, out / "poses_pred.txt")
        write_diagnostics(results, out / "diagnostics.csv")
    return traj, results


class DepthFlowOdometry(BaseEstimator):
    """Estimator wrapper around :func:`track_sequence`.

    Parameters mirror the flat tracker configuration keys, so
    ``get_params``/``set_params`` and config files use the same names.
    ``fit`` tracks a sequence (a directory path, or any object exposing
    ``K``, ``n_frames`` and ``pair(i)``) and stores ``trajectory_`` and
    ``frame_results_``.
    """

    def __init__(self, delta_f=5.0, top_n=2000, border_px=10, selection_mode="global",
                 flow_gate="field", cheirality_margin=0.1, min_parallax_deg=MIN_PARALLAX_DEG,
                 min_depth=0.1, max_depth=200.0,
                 essential_threshold=1e-4, essential_max_iterations=1000, essential_confidence=0.999,
                 pnp_px_threshold=2.0, pnp_max_iterations=1000, pnp_confidence=0.999,
                 pnp_gn_max_iterations=20, pnp_gn_step_tol=1e-10,
                 scale_rel_tol=0.1, scale_min_inlier_frac=0.2, scale_max_iterations=200,
                 scale_confidence=0.999, scale_min_pairs=10, rng_seed=0):
        self.delta_f = delta_f
        self.top_n = top_n
        self.border_px = border_px
        self.selection_mode = selection_mode
        self.flow_gate = flow_gate
        self.cheirality_margin = cheirality_margin
        self.min_parallax_deg = min_parallax_deg
        self.min_depth = min_depth
        self.max_depth = max_depth
        self.essential_threshold = essential_threshold
        self.essential_max_iterations = essential_max_iterations
        self.essential_confidence = essential_confidence
        self.pnp_px_threshold = pnp_px_threshold
        self.pnp_max_iterations = pnp_max_iterations
        self.pnp_confidence = pnp_confidence
        self.pnp_gn_max_iterations = pnp_gn_max_iterations
        self.pnp_gn_step_tol = pnp_gn_step_tol
        self.scale_rel_tol = scale_rel_tol
        self.scale_min_inlier_frac = scale_min_inlier_frac
        self.scale_max_iterations = scale_max_iterations
        self.scale_confidence = scale_confidence
        self.scale_min_pairs = scale_min_pairs
        self.rng_seed = rng_seed

    @classmethod
    def from_config(cls, cfg: TrackerConfig) -> DepthFlowOdometry:
        return cls(**cfg.to_flat())

    def config(self) -> TrackerConfig:
        return TrackerConfig.from_flat(self.get_params())

    def fit(self, X, y=None):
        self.trajectory_, self.frame_results_ = track_sequence(X, self.config())
        self.n_frames_ = len(self.trajectory_)
        return self

    def fit_predict(self, X, y=None) -> np.ndarray:
        """Track ``X`` and return camera-to-world poses as an ``(n_frames, 4, 4)`` array."""
        return self.fit(X).trajectory_.matrices

    @property
    def branches_(self) -> list[Branch]:
        check_is_fitted(self, "frame_results_")
        return [r.branch for r in self.frame_results_]

    def write(self, out_dir) -> None:
        check_is_fitted(self, "trajectory_")
        out = Path(out_dir)
        write_trajectory(self.trajectory_, out / "poses_pred.txt")
        write_diagnostics(self.frame_results_, out / "diagnostics.csv")


__all__ = [
    "Branch",
    "DepthFlowOdometry",
    "DirectorySource",
    "FrameResult",
    "TrackerConfig",
    "run_sequence",
    "track_pair",
    "track_sequence",
    "write_diagnostics",
]
