from __future__ import annotations

import functools

import numpy as np
import pytest

from dfvo.geometry import CameraIntrinsics, RigidTransform, so3_exp
from dfvo.io import Trajectory
from dfvo.synth import SceneConfig, build_sequence


@functools.lru_cache(maxsize=None)
def cached_sequence(**kw):
    return build_sequence(SceneConfig(**kw))


@pytest.fixture(scope="session")
def short_forward():
    return cached_sequence(n_frames=12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def kitti_K():
    return CameraIntrinsics(721.5, 721.5, 609.6, 172.9, 1241, 376)


def random_pose(rng, max_deg=30.0, max_t=3.0) -> RigidTransform:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    R = so3_exp(axis * np.radians(rng.uniform(0, max_deg)))
    return RigidTransform(R, rng.uniform(-max_t, max_t, size=3))


def random_walk(rng, n=50, step=1.0) -> Trajectory:
    poses = [RigidTransform.identity()]
    for _ in range(n - 1):
        poses.append(poses[-1] @ random_pose(rng, 5.0, step))
    return Trajectory(poses)


def straight_line(n: int, step: float = 1.0) -> Trajectory:
    return Trajectory(RigidTransform.from_translation(0.0, 0.0, step * i) for i in range(n))


def plane_interior(frames, i: int) -> np.ndarray:
    """Pixels of frame i whose backward-flow stencil in frame i-1 is valid and on the same plane."""
    fwd, bwd_ok = frames.flows_fwd[i], frames.flows_bwd[i].valid
    ids_cur, ids_prev = frames.plane_ids[i], frames.plane_ids[i - 1]
    H, W = ids_cur.shape
    ok = fwd.valid.copy()
    F = np.where(ok[..., None], fwd.data, 0.0)
    v, u = np.mgrid[0:H, 0:W]
    x, y = u + F[..., 0], v + F[..., 1]
    ok &= (x >= 0) & (x <= W - 1) & (y >= 0) & (y <= H - 1)
    x0 = np.clip(np.floor(x).astype(int), 0, W - 2)
    y0 = np.clip(np.floor(y).astype(int), 0, H - 2)
    for dy in (0, 1):
        for dx in (0, 1):
            ok &= (ids_prev[y0 + dy, x0 + dx] == ids_cur) & bwd_ok[y0 + dy, x0 + dx]
    return ok


def essential_scale_inputs(frames, i: int, seed=0):
    """Provided and unit-baseline triangulated depths at the essential-branch inliers of pair i."""
    from dfvo.epipolar import recover_pose, triangulate
    from dfvo.matching import fb_inconsistency, select_best_n

    depth, fwd, bwd = frames.pair(i)
    m = select_best_n(fwd, fb_inconsistency(fwd, bwd), 2000, mode="uniform")
    epi = recover_pose(m, frames.K, seed=seed)
    inl = m.subset(epi.inlier_mask)
    tri, _ = triangulate(inl, frames.K, epi.pose())
    u = np.rint(inl.p_cur[:, 0]).astype(int)
    v = np.rint(inl.p_cur[:, 1]).astype(int)
    return depth.data[v, u].astype(float), tri, epi
