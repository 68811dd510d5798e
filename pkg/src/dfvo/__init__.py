"""Monocular visual odometry from dense depth and optical flow."""
from .evaluation import (AlignmentResult, KittiErrors, TrajectoryAligner, ate, evaluate,
                         kitti_odometry_errors, rpe, umeyama_align)
from .exceptions import VOError
from .geometry import CameraIntrinsics, RigidTransform
from .io import DepthMap, FlowField, SequenceDir, Trajectory, read_trajectory, write_trajectory
from .synth import SceneConfig, build_sequence, generate_sequence
from .tracker import Branch, DepthFlowOdometry, TrackerConfig, track_sequence

__version__ = "0.1.0"

__all__ = [
    "AlignmentResult", "Branch", "CameraIntrinsics", "DepthFlowOdometry", "DepthMap", "FlowField",
    "KittiErrors", "RigidTransform", "SceneConfig", "SequenceDir", "TrackerConfig", "Trajectory",
    "TrajectoryAligner", "VOError", "ate", "build_sequence", "evaluate", "generate_sequence",
    "kitti_odometry_errors", "read_trajectory", "rpe", "track_sequence", "umeyama_align",
    "write_trajectory",
]
