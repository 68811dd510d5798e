"""Readers and writers for flow, depth, calibration and trajectory files.

Formats:

* ``.flo`` (Middlebury): float32 magic ``202021.25``, int32 width, int32
  height, then interleaved ``(du, dv)`` float32 pairs, row-major. Always
  little-endian.
* ``.pfm`` grayscale: ``Pf\\n<w> <h>\\n-1.0\\n`` then float32 rows stored
  bottom-to-top. Arrays in memory are top-down.
* trajectory text (KITTI odometry): one row-major 3x4 ``[R|t]`` per line,
  camera-to-world.
* calibration text: ``fx fy cx cy width height`` on one line.

Sequence directory layout::

    calib.txt
    depth/%06d.pfm       depth of frame i
    flow_fwd/%06d.flo    flow from frame i to frame i-1 (defined on frame i pixels)
    flow_bwd/%06d.flo    flow from frame i-1 to frame i (defined on frame i-1 pixels)
    gt_poses.txt         optional

Pair products are indexed by the later frame, starting at 000001.
"""
from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .exceptions import (
    BadCalibration,
    BadHeader,
    BadLineLength,
    BadMagic,
    MissingFrameProduct,
    NegativeDepth,
    NonRotation,
    TruncatedFile,
)
from .geometry import CameraIntrinsics, RigidTransform, nearest_rotation, orthonormality_error

logger = logging.getLogger(__name__)

FLO_MAGIC = 202021.25
# Middlebury marks unknown flow with values >= 1e9
FLOW_SENTINEL = 1e9

_ROT_WARN_TOL = 1e-4
_ROT_FAIL_TOL = 1e-2


@dataclass(frozen=True, eq=False)
class FlowField:
    """Dense pixel displacements, ``data`` is ``(height, width, 2)`` float32."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] != 2:
            raise ValueError(f"flow must be (H, W, 2), got {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def valid(self) -> np.ndarray:
        """Pixels whose flow is finite and not the unknown-flow sentinel."""
        d = self.data
        return np.all(np.isfinite(d) & (np.abs(d) < FLOW_SENTINEL), axis=2)


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Metric depth, ``data`` is ``(height, width)`` float32; 0 marks invalid."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise ValueError(f"depth must be (H, W), got {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def valid(self) -> np.ndarray:
        return self.data > 0


class Trajectory(Sequence[RigidTransform]):
    """Ordered camera-to-world poses, one per frame."""

    def __init__(self, poses):
        poses = tuple(poses)
        if not poses:
            raise ValueError("trajectory must contain at least one pose")
        self._poses = poses

    def __len__(self) -> int:
        return len(self._poses)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Trajectory(self._poses[i])
        return self._poses[i]

    def __iter__(self) -> Iterator[RigidTransform]:
        return iter(self._poses)

    @property
    def positions(self) -> np.ndarray:
        return np.array([T.translation for T in self._poses])

    @property
    def matrices(self) -> np.ndarray:
        return np.array([T.matrix for T in self._poses])

    def __repr__(self) -> str:
        return f"Trajectory(n={len(self)})"


def read_flow(path) -> FlowField:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise TruncatedFile(f"{path}: {len(raw)} bytes, header needs 12")
    magic = np.frombuffer(raw, "<f4", count=1)[0]
    if magic != np.float32(FLO_MAGIC):
        raise BadMagic(f"{path}: magic {magic!r} != {FLO_MAGIC}")
    w, h = (int(x) for x in np.frombuffer(raw, "<i4", count=2, offset=4))
    if w <= 0 or h <= 0:
        raise BadHeader(f"{path}: bad size {w}x{h}")
    n = 2 * w * h
    if len(raw) - 12 < 4 * n:
        raise TruncatedFile(f"{path}: payload {len(raw) - 12} bytes, header promises {4 * n}")
    data = np.frombuffer(raw, "<f4", count=n, offset=12).reshape(h, w, 2)
    return FlowField(data.astype(np.float32))


def write_flow(flow: FlowField, path) -> None:
    header = np.array([FLO_MAGIC], "<f4").tobytes() + np.array([flow.width, flow.height], "<i4").tobytes()
    _write_bytes(path, header + flow.data.astype("<f4").tobytes())


_PFM_DIMS = re.compile(rb"^\s*(\d+)\s+(\d+)\s*$")


def read_depth(path) -> DepthMap:
    raw = Path(path).read_bytes()
    lines = raw.split(b"\n", 3)
    if len(lines) < 4:
        raise BadHeader(f"{path}: incomplete PFM header")
    kind, dims, scale_line, payload = lines
    if kind.strip() != b"Pf":
        raise BadHeader(f"{path}: expected grayscale 'Pf', got {kind.strip()[:8]!r}")
    m = _PFM_DIMS.match(dims)
    if not m:
        raise BadHeader(f"{path}: bad dimensions line {dims[:32]!r}")
    w, h = int(m.group(1)), int(m.group(2))
    try:
        scale = float(scale_line)
    except ValueError:
        raise BadHeader(f"{path}: bad scale line {scale_line[:32]!r}") from None
    if w <= 0 or h <= 0 or scale == 0:
        raise BadHeader(f"{path}: bad header values {w}x{h} scale {scale}")
    if len(payload) < 4 * w * h:
        raise TruncatedFile(f"{path}: payload {len(payload)} bytes, header promises {4 * w * h}")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(payload, dtype, count=w * h).reshape(h, w)[::-1]
    if not np.all(np.isfinite(data)) or np.any(data < 0):
        raise NegativeDepth(f"{path}: depth values must be finite and >= 0")
    return DepthMap(data.astype(np.float32))


def write_depth(depth: DepthMap, path) -> None:
    header = f"Pf\n{depth.width} {depth.height}\n-1.0\n".encode("ascii")
    _write_bytes(path, header + np.ascontiguousarray(depth.data[::-1]).astype("<f4").tobytes())


def _fmt(x: float) -> str:
    # +0.0 folds negative zero so identity prints as "0", not "-0"
    return f"{x + 0.0:.9g}"


def format_pose(T: RigidTransform) -> str:
    return " ".join(_fmt(v) for v in T.matrix[:3].reshape(-1))


def read_trajectory(path) -> Trajectory:
    poses = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            toks = line.split()
            if len(toks) != 12:
                raise BadLineLength(f"{path}:{lineno}: expected 12 numbers, got {len(toks)}")
            try:
                M = np.array([float(t) for t in toks]).reshape(3, 4)
            except ValueError:
                raise BadLineLength(f"{path}:{lineno}: non-numeric entry") from None
            err = orthonormality_error(M[:, :3])
            if err > _ROT_FAIL_TOL or not np.isfinite(err) or np.linalg.det(M[:, :3]) <= 0:
                raise NonRotation(f"{path}:{lineno}: rotation off SO(3) by {err:.3g}")
            if err > _ROT_WARN_TOL:
                logger.warning("%s:%d: rotation drift %.3g, projecting to SO(3)", path, lineno, err)
            poses.append(RigidTransform(nearest_rotation(M[:, :3]), M[:, 3]))
    if not poses:
        raise BadLineLength(f"{path}: no poses")
    return Trajectory(poses)


def write_trajectory(traj, path) -> None:
    _write_text(path, "".join(format_pose(T) + "\n" for T in traj))


def read_calibration(path) -> CameraIntrinsics:
    text = Path(path).read_text()
    toks = text.split()
    if len(toks) != 6:
        raise BadCalibration(f"{path}: expected 'fx fy cx cy width height', got {len(toks)} fields")
    try:
        fx, fy, cx, cy, w, h = (float(t) for t in toks)
    except ValueError:
        raise BadCalibration(f"{path}: non-numeric field") from None
    if w != int(w) or h != int(h):
        raise BadCalibration(f"{path}: image size must be integral")
    try:
        return CameraIntrinsics(fx, fy, cx, cy, int(w), int(h))
    except ValueError as exc:
        raise BadCalibration(f"{path}: {exc}") from None


def write_calibration(K: CameraIntrinsics, path) -> None:
    _write_text(path, f"{K.fx!r} {K.fy!r} {K.cx!r} {K.cy!r} {K.width} {K.height}\n")


def _write_bytes(path, data: bytes) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(data)


def _write_text(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


class SequenceDir:
    """Paths and loaders for one sequence directory."""

    def __init__(self, root):
        self.root = Path(root)

    calib_path = property(lambda self: self.root / "calib.txt")
    gt_path = property(lambda self: self.root / "gt_poses.txt")

    def depth_path(self, i: int) -> Path:
        return self.root / "depth" / f"{i:06d}.pfm"

    def flow_fwd_path(self, i: int) -> Path:
        return self.root / "flow_fwd" / f"{i:06d}.flo"

    def flow_bwd_path(self, i: int) -> Path:
        return self.root / "flow_bwd" / f"{i:06d}.flo"

    def outlier_mask_path(self, i: int) -> Path:
        return self.root / "outlier_mask" / f"{i:06d}.pfm"

    def n_frames(self) -> int:
        """One past the highest frame index found among the products."""
        top = 0
        for sub, ext in (("depth", ".pfm"), ("flow_fwd", ".flo"), ("flow_bwd", ".flo")):
            d = self.root / sub
            if not d.is_dir():
                continue
            for name in os.listdir(d):
                stem, e = os.path.splitext(name)
                if e == ext and stem.isdigit():
                    top = max(top, int(stem))
        return top + 1

    def _require(self, path: Path) -> Path:
        if not path.is_file():
            raise MissingFrameProduct(f"missing {path}")
        return path

    def calibration(self) -> CameraIntrinsics:
        return read_calibration(self._require(self.calib_path))

    def ground_truth(self) -> Trajectory | None:
        return read_trajectory(self.gt_path) if self.gt_path.is_file() else None

    def pair(self, i: int) -> tuple[DepthMap, FlowField, FlowField]:
        """Products for the pair ``(i, i-1)``: depth of frame i, forward and backward flow."""
        paths = (self.depth_path(i), self.flow_fwd_path(i), self.flow_bwd_path(i))
        for p in paths:
            self._require(p)
        return read_depth(paths[0]), read_flow(paths[1]), read_flow(paths[2])

    def check_complete(self, n_frames: int) -> None:
        for i in range(1, n_frames):
            for p in (self.depth_path(i), self.flow_fwd_path(i), self.flow_bwd_path(i)):
                self._require(p)
