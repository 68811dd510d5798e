"""Input validation helpers shared by the estimators and free functions."""
from __future__ import annotations

import numpy as np

from .exceptions import LengthMismatch, SizeMismatch
from .geometry import CameraIntrinsics, RigidTransform
from .io import DepthMap, FlowField, Trajectory


def check_same_size(*rasters) -> tuple[int, int]:
    """Return ``(width, height)`` shared by all rasters, else raise SizeMismatch."""
    sizes = {(r.width, r.height) for r in rasters}
    if len(sizes) != 1:
        raise SizeMismatch(f"raster sizes differ: {sorted(sizes)}")
    return sizes.pop()


def check_pair_products(K: CameraIntrinsics, depth: DepthMap, fwd: FlowField, bwd: FlowField) -> None:
    size = check_same_size(depth, fwd, bwd)
    if size != K.size:
        raise SizeMismatch(f"products are {size[0]}x{size[1]} but calibration is {K.width}x{K.height}")


def check_points(X, dim: int, name: str = "points") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None]
    if X.ndim != 2 or X.shape[1] != dim:
        raise ValueError(f"{name} must be (N, {dim}), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    return X


def as_trajectory(obj) -> Trajectory:
    """Accept a Trajectory, a sequence of RigidTransform, or an (N, 3|4, 4) array."""
    if isinstance(obj, Trajectory):
        return obj
    if isinstance(obj, np.ndarray):
        if obj.ndim != 3 or obj.shape[1:] not in ((3, 4), (4, 4)):
            raise ValueError(f"pose array must be (N, 3, 4) or (N, 4, 4), got {obj.shape}")
        return Trajectory(RigidTransform.from_matrix(M) for M in obj)
    poses = list(obj)
    if not all(isinstance(T, RigidTransform) for T in poses):
        raise TypeError("expected a sequence of RigidTransform")
    return Trajectory(poses)


def check_trajectory_pair(pred, gt, min_length: int = 1) -> tuple[Trajectory, Trajectory]:
    pred, gt = as_trajectory(pred), as_trajectory(gt)
    if len(pred) != len(gt):
        raise LengthMismatch(f"pred has {len(pred)} poses, gt has {len(gt)}")
    if len(gt) < min_length:
        raise LengthMismatch(f"need at least {min_length} poses, got {len(gt)}")
    return pred, gt
