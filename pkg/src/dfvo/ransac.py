"""Shared RANSAC plumbing: parameter blocks and the adaptive stopping rule."""
from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class EssentialRansacParams:
    threshold: float = 1e-4  # Sampson distance, normalized image coordinates
    max_iterations: int = 1000
    confidence: float = 0.999


@dataclass(frozen=True)
class PnPRansacParams:
    px_threshold: float = 2.0
    max_iterations: int = 1000
    confidence: float = 0.999
    gn_max_iterations: int = 20
    gn_step_tol: float = 1e-10


@dataclass(frozen=True)
class ScaleParams:
    rel_tol: float = 0.1
    min_inlier_frac: float = 0.2
    max_iterations: int = 200
    confidence: float = 0.999
    min_pairs: int = 10


def required_iterations(inlier_ratio: float, sample_size: int, confidence: float, cap: int) -> int:
    """Iterations needed to draw one all-inlier sample with the given confidence."""
    if inlier_ratio <= 0:
        return cap
    good = inlier_ratio**sample_size
    if good >= 1.0:
        return 1
    denom = math.log1p(-good)
    if denom == 0.0:
        return cap
    n = math.log(1.0 - confidence) / denom
    return min(cap, max(1, math.ceil(n)))
