"""Synthetic rigid scenes with exact depth, flow and poses.

The scene is a ground plane plus up to five vertical walls boxing in the
camera path. Depth is rendered by ray-plane intersection, and flows are
obtained by reprojecting every pixel's 3D point through the true relative
pose. Backward flow is rendered from frame ``i-1`` independently rather than
by negating forward flow.

Camera axes: x right, y down, z forward. The ground is the plane
``y = camera_height`` in world coordinates.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from .exceptions import InvalidConfig
from .geometry import CameraIntrinsics, RigidTransform, inverse, so3_exp
from .io import (
    FLOW_SENTINEL,
    DepthMap,
    FlowField,
    SequenceDir,
    Trajectory,
    write_calibration,
    write_depth,
    write_flow,
    write_trajectory,
)
from .matching import MatchSet


class MotionProfile(str, Enum):
    FORWARD = "FORWARD"
    TURNING = "TURNING"
    CREEP = "CREEP"
    PURE_ROTATION = "PURE_ROTATION"
    MIXED = "MIXED"


@dataclass(frozen=True)
class SceneConfig:
    n_frames: int = 100
    profile: str = "FORWARD"
    step_m: float = 1.0
    step_deg: float = 1.0
    width: int = 416
    height: int = 128
    fx: float = 240.0
    fy: float = 240.0
    cx: float = 208.0
    cy: float = 64.0
    n_walls: int = 4
    camera_height: float = 1.5
    corridor_half_width: float = 8.0
    end_margin: float = 30.0
    wall_tilt_deg: float = 4.0
    creep_target_flow: float = 2.0
    rotation_baseline_m: float = 1e-6
    flow_noise_px: float = 0.0
    depth_noise_rel: float = 0.0
    outlier_fraction: float = 0.0
    outlier_magnitude: float = 20.0
    rng_seed: int = 0

    def __post_init__(self):
        try:
            MotionProfile(self.profile)
        except ValueError:
            raise InvalidConfig(f"unknown motion profile {self.profile!r}") from None
        if self.n_frames < 2:
            raise InvalidConfig("n_frames must be >= 2")
        if not 0 <= self.n_walls <= 5:
            raise InvalidConfig("n_walls must be in [0, 5]")
        if min(self.flow_noise_px, self.depth_noise_rel, self.outlier_magnitude) < 0:
            raise InvalidConfig("noise parameters must be >= 0")
        if not 0 <= self.outlier_fraction < 1:
            raise InvalidConfig("outlier_fraction must be in [0, 1)")
        if self.step_m < 0 or self.camera_height <= 0:
            raise InvalidConfig("step_m must be >= 0 and camera_height > 0")
        try:
            self.intrinsics
        except ValueError as exc:
            raise InvalidConfig(str(exc)) from None

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, self.cx, self.cy, self.width, self.height)


def yaw(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_x(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def make_trajectory(cfg: SceneConfig, step_m: float | None = None) -> Trajectory:
    """Camera-to-world poses for the configured motion profile; the first is identity."""
    step = cfg.step_m if step_m is None else step_m
    profile = MotionProfile(cfg.profile)
    poses = []
    if profile in (MotionProfile.FORWARD, MotionProfile.CREEP):
        for k in range(cfg.n_frames):
            poses.append(RigidTransform(np.eye(3), [0.0, 0.0, k * step]))
    elif profile is MotionProfile.TURNING:
        pos = np.zeros(3)
        for k in range(cfg.n_frames):
            R = yaw(k * cfg.step_deg)
            poses.append(RigidTransform(R, pos.copy()))
            pos = pos + step * R[:, 2]
    elif profile is MotionProfile.PURE_ROTATION:
        for k in range(cfg.n_frames):
            poses.append(RigidTransform(yaw(k * cfg.step_deg), [k * cfg.rotation_baseline_m, 0.0, 0.0]))
    else:
        rng = np.random.default_rng([cfg.rng_seed, 7])
        phase = rng.uniform(0, 2 * np.pi, size=3)
        pos = np.zeros(3)
        heading = 0.0
        for k in range(cfg.n_frames):
            pitch = 0.5 * cfg.step_deg * math.sin(2 * np.pi * k / 23 + phase[1])
            R = yaw(heading) @ _rot_x(pitch)
            bob = np.array([0.0, 0.03 * math.sin(2 * np.pi * k / 11 + phase[2]), 0.0])
            poses.append(RigidTransform(R, pos + bob))
            heading += cfg.step_deg * math.sin(2 * np.pi * k / 40 + phase[0])
            pos = pos + step * yaw(heading)[:, 2]
    if not poses[0].allclose(RigidTransform.identity(), 0.0):
        first_inv = inverse(poses[0])
        poses = [first_inv @ T for T in poses]
    return Trajectory(poses)


@dataclass(frozen=True, eq=False)
class Plane:
    """Points ``X`` with ``normal . X = offset`` (world frame)."""

    normal: np.ndarray
    offset: float


class SyntheticScene:
    """Static piecewise-planar world seen through a pinhole camera."""

    def __init__(self, planes, K: CameraIntrinsics):
        self.planes = list(planes)
        self.K = K
        W, H = K.size
        v, u = np.mgrid[0:H, 0:W].astype(np.float64)
        self._rays = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1)
        self._grid = np.stack([u, v], axis=-1)

    @classmethod
    def around(cls, traj: Trajectory, cfg: SceneConfig) -> SyntheticScene:
        """Ground plane plus walls placed around the trajectory's footprint."""
        planes = [Plane(np.array([0.0, 1.0, 0.0]), cfg.camera_height)]
        P = traj.positions
        lo, hi = P.min(axis=0), P.max(axis=0)
        rng = np.random.default_rng([cfg.rng_seed, 11])
        w, m = cfg.corridor_half_width, cfg.end_margin
        # (inward normal before tilt, anchor point); front, left, right, back
        specs = [
            (np.array([0.0, 0.0, -1.0]), np.array([0.5 * (lo[0] + hi[0]), 0.0, hi[2] + m])),
            (np.array([1.0, 0.0, 0.0]), np.array([lo[0] - w, 0.0, 0.5 * (lo[2] + hi[2])])),
            (np.array([-1.0, 0.0, 0.0]), np.array([hi[0] + w, 0.0, 0.5 * (lo[2] + hi[2])])),
            (np.array([0.0, 0.0, 1.0]), np.array([0.5 * (lo[0] + hi[0]), 0.0, lo[2] - m])),
        ]
        # fifth wall: oblique, cutting the front-right corner of the box
        corner = np.array([hi[0] + 0.5 * w, 0.0, hi[2] + 0.5 * m])
        specs.append((np.array([-1.0, 0.0, -1.0]) / np.sqrt(2), corner))
        for normal, anchor in specs[: cfg.n_walls]:
            tilt = rng.uniform(-cfg.wall_tilt_deg, cfg.wall_tilt_deg)
            for _ in range(30):
                n = yaw(tilt) @ normal
                # keep every camera centre at least 3 m in front of the wall
                if np.min(P @ n - n @ anchor) >= 3.0:
                    break
                tilt *= 0.5
            else:
                n = normal
            planes.append(Plane(n, float(n @ anchor)))
        return cls(planes, cfg.intrinsics)

    def render(self, T: RigidTransform) -> tuple[np.ndarray, np.ndarray]:
        """Depth (0 where no surface is hit) and the index of the plane seen at each pixel (-1 for none)."""
        dirs = self._rays @ T.rotation.T
        c = T.translation
        best = np.full(dirs.shape[:2], np.inf)
        ids = np.full(dirs.shape[:2], -1)
        for k, pl in enumerate(self.planes):
            denom = dirs @ pl.normal
            with np.errstate(divide="ignore", invalid="ignore"):
                lam = (pl.offset - pl.normal @ c) / denom
            hit = (np.abs(denom) > 1e-12) & (lam > 1e-6) & (lam < best)
            best[hit] = lam[hit]
            ids[hit] = k
        depth = np.where(np.isfinite(best), best, 0.0)
        return depth, ids

    def flow(self, depth: np.ndarray, rel: RigidTransform) -> np.ndarray:
        """Flow taking pixels of a frame with ``depth`` into the frame that ``rel`` maps into."""
        K = self.K
        ok = depth > 0
        X = self._rays * depth[..., None]
        Y = X @ rel.rotation.T + rel.translation
        z = Y[..., 2]
        ok &= z > 1e-9
        zs = np.where(ok, z, 1.0)
        u = K.fx * Y[..., 0] / zs + K.cx
        v = K.fy * Y[..., 1] / zs + K.cy
        ok &= (u >= 0) & (u <= K.width - 1) & (v >= 0) & (v <= K.height - 1)
        F = np.stack([u, v], axis=-1) - self._grid
        F[~ok] = FLOW_SENTINEL
        return F


@dataclass
class SyntheticFrames:
    """In-memory products of a synthetic sequence (noise and outliers applied)."""

    cfg: SceneConfig
    scene: SyntheticScene
    trajectory: Trajectory
    depths: list[np.ndarray]
    plane_ids: list[np.ndarray]
    flows_fwd: dict[int, FlowField]
    flows_bwd: dict[int, FlowField]
    outlier_masks: dict[int, np.ndarray]

    @property
    def K(self) -> CameraIntrinsics:
        return self.cfg.intrinsics

    @property
    def n_frames(self) -> int:
        return len(self.trajectory)

    def depth_map(self, i: int) -> DepthMap:
        return DepthMap(self.depths[i])

    def relative_pose(self, i: int) -> RigidTransform:
        return inverse(self.trajectory[i - 1]) @ self.trajectory[i]

    def pair(self, i: int) -> tuple[DepthMap, FlowField, FlowField]:
        return self.depth_map(i), self.flows_fwd[i], self.flows_bwd[i]


def _calibrated_creep_step(cfg: SceneConfig) -> float:
    step = max(cfg.step_m, 1e-3)
    for _ in range(3):
        traj = make_trajectory(cfg, step)
        scene = SyntheticScene.around(traj, cfg)
        depth, _ = scene.render(traj[1])
        F = scene.flow(depth, inverse(traj[0]) @ traj[1])
        ok = np.all(np.abs(F) < FLOW_SENTINEL, axis=2)
        mean = float(np.linalg.norm(F[ok], axis=1).mean())
        step *= cfg.creep_target_flow / mean
    return step


def build_sequence(cfg: SceneConfig) -> SyntheticFrames:
    """Render every product of ``cfg`` in memory (deterministic in ``cfg.rng_seed``)."""
    step = _calibrated_creep_step(cfg) if cfg.profile == MotionProfile.CREEP.value else cfg.step_m
    traj = make_trajectory(cfg, step)
    scene = SyntheticScene.around(traj, cfg)
    renders = [scene.render(T) for T in traj]
    clean = [d for d, _ in renders]
    ids = [p for _, p in renders]

    depths = []
    for i, d in enumerate(clean):
        if cfg.depth_noise_rel > 0:
            rng = np.random.default_rng([cfg.rng_seed, i, 1])
            d = np.where(d > 0, d * np.clip(1 + cfg.depth_noise_rel * rng.standard_normal(d.shape), 0.05, None), 0.0)
        depths.append(d.astype(np.float32))

    fwd, bwd, masks = {}, {}, {}
    for i in range(1, len(traj)):
        rel = inverse(traj[i - 1]) @ traj[i]
        f = scene.flow(clean[i], rel)
        b = scene.flow(clean[i - 1], inverse(rel))
        if cfg.flow_noise_px > 0:
            rng = np.random.default_rng([cfg.rng_seed, i, 2])
            for F in (f, b):
                ok = np.all(np.abs(F) < FLOW_SENTINEL, axis=2)
                F[ok] += cfg.flow_noise_px * rng.standard_normal((int(ok.sum()), 2))
        ff = FlowField(f)
        if cfg.outlier_fraction > 0:
            ff, masks[i] = inject_outliers(ff, cfg.outlier_fraction, cfg.outlier_magnitude, seed=[cfg.rng_seed, i, 3])
        fwd[i], bwd[i] = ff, FlowField(b)
    return SyntheticFrames(cfg, scene, traj, depths, ids, fwd, bwd, masks)


def inject_outliers(flow: FlowField, fraction: float, magnitude: float, seed=0) -> tuple[FlowField, np.ndarray]:
    """Perturb ``floor(fraction * n_valid)`` valid flow vectors by random vectors of norm in [magnitude/2, magnitude]."""
    if not 0 <= fraction < 1:
        raise ValueError("fraction must be in [0, 1)")
    valid_idx = np.flatnonzero(flow.valid)
    k = int(math.floor(fraction * len(valid_idx)))
    mask = np.zeros((flow.height, flow.width), dtype=bool)
    if k == 0:
        return flow, mask
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(valid_idx, size=k, replace=False))
    ang = rng.uniform(0.0, 2 * np.pi, size=k)
    norm = rng.uniform(0.5 * magnitude, magnitude, size=k)
    data = flow.data.copy().reshape(-1, 2)
    data[chosen, 0] += (norm * np.cos(ang)).astype(np.float32)
    data[chosen, 1] += (norm * np.sin(ang)).astype(np.float32)
    mask.reshape(-1)[chosen] = True
    return FlowField(data.reshape(flow.data.shape)), mask


def generate_sequence(cfg: SceneConfig, out_dir) -> Trajectory:
    """Write a synthetic sequence in the standard directory layout; returns the ground truth."""
    frames = build_sequence(cfg)
    seq = SequenceDir(out_dir)
    seq.root.mkdir(parents=True, exist_ok=True)
    write_calibration(cfg.intrinsics, seq.calib_path)
    write_trajectory(frames.trajectory, seq.gt_path)
    meta = "".join(f"{k} = {v}\n" for k, v in asdict(cfg).items())
    (seq.root / "scene_meta.txt").write_text(meta)
    for i, d in enumerate(frames.depths):
        write_depth(DepthMap(d), seq.depth_path(i))
    for i in frames.flows_fwd:
        write_flow(frames.flows_fwd[i], seq.flow_fwd_path(i))
        write_flow(frames.flows_bwd[i], seq.flow_bwd_path(i))
        if i in frames.outlier_masks:
            write_depth(DepthMap(frames.outlier_masks[i].astype(np.float32)), seq.outlier_mask_path(i))
    return frames.trajectory


@dataclass(frozen=True, eq=False)
class TwoViewProblem:
    """Exact correspondences of a random point cloud seen from two cameras.

    ``pose`` maps frame-i points into frame i-1.
    """

    K: CameraIntrinsics
    pose: RigidTransform
    points: np.ndarray
    matches: MatchSet

    @property
    def depth(self) -> np.ndarray:
        return self.points[:, 2]


def random_rotation(rng, max_deg: float) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return so3_exp(axis * math.radians(rng.uniform(0, max_deg)))


def random_two_view_problem(rng, n_points: int = 200, K: CameraIntrinsics | None = None,
                            max_rot_deg: float = 15.0, baseline=(1.0, 2.5),
                            depth_range=(3.0, 12.0), pose: RigidTransform | None = None) -> TwoViewProblem:
    """Random generic two-view geometry with every point visible in both views.

    ``pose`` fixes the relative pose instead of drawing one.
    """
    if K is None:
        K = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
    if pose is None:
        R = random_rotation(rng, max_rot_deg)
        d = rng.normal(size=3)
        pose = RigidTransform(R, d / np.linalg.norm(d) * rng.uniform(*baseline))
    pts = []
    while sum(len(p) for p in pts) < n_points:
        m = 4 * n_points
        z = rng.uniform(*depth_range, size=m)
        u = rng.uniform(0, K.width - 1, size=m)
        v = rng.uniform(0, K.height - 1, size=m)
        X = np.stack([(u - K.cx) / K.fx * z, (v - K.cy) / K.fy * z, z], axis=1)
        Y = pose.apply(X)
        with np.errstate(divide="ignore", invalid="ignore"):
            up = K.fx * Y[:, 0] / Y[:, 2] + K.cx
            vp = K.fy * Y[:, 1] / Y[:, 2] + K.cy
        ok = (Y[:, 2] > 0.5) & (up >= 0) & (up <= K.width - 1) & (vp >= 0) & (vp <= K.height - 1)
        pts.append(X[ok])
    X = np.concatenate(pts)[:n_points]
    Y = pose.apply(X)
    p_cur = np.stack([K.fx * X[:, 0] / X[:, 2] + K.cx, K.fy * X[:, 1] / X[:, 2] + K.cy], axis=1)
    p_prev = np.stack([K.fx * Y[:, 0] / Y[:, 2] + K.cx, K.fy * Y[:, 1] / Y[:, 2] + K.cy], axis=1)
    return TwoViewProblem(K, pose, X, MatchSet.from_points(p_prev, p_cur, K.size))
