"""Metric scale from provided depth vs. up-to-scale triangulated depth."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ScaleConsensusFailure, TooFewValidPairs
from .ransac import ScaleParams, required_iterations


@dataclass(frozen=True)
class ScaleEstimate:
    scale: float
    inlier_fraction: float
    inlier_mask: np.ndarray


def recover_scale(depth, tri_depth, params: ScaleParams = ScaleParams(), seed: int = 0) -> ScaleEstimate:
    """Ratio ``depth / tri_depth`` agreed on by 1-point RANSAC, refined as the inlier median.

    ``depth`` and ``tri_depth`` are per-match arrays; entries <= 0 (or
    non-finite) are treated as invalid. The returned ``inlier_mask`` is over
    the input entries.
    """
    depth = np.asarray(depth, dtype=float)
    tri_depth = np.asarray(tri_depth, dtype=float)
    if depth.shape != tri_depth.shape:
        raise ValueError("depth arrays differ in shape")
    valid = np.isfinite(depth) & np.isfinite(tri_depth) & (depth > 0) & (tri_depth > 0)
    idx = np.flatnonzero(valid)
    n = len(idx)
    if n < params.min_pairs:
        raise TooFewValidPairs(f"{n} valid depth pairs, need {params.min_pairs}")
    ratios = depth[idx] / tri_depth[idx]

    rng = np.random.default_rng(seed)
    best_count, best_inl = 0, None
    needed = params.max_iterations
    it = 0
    while it < min(needed, params.max_iterations):
        it += 1
        hyp = ratios[rng.integers(n)]
        inl = np.abs(ratios / hyp - 1.0) < params.rel_tol
        count = int(inl.sum())
        if count > best_count:
            best_count, best_inl = count, inl
            needed = required_iterations(count / n, 1, params.confidence, params.max_iterations)

    frac = best_count / n
    if frac < params.min_inlier_frac:
        raise ScaleConsensusFailure(f"scale inlier fraction {frac:.3f} < {params.min_inlier_frac}")
    s = float(np.median(ratios[best_inl]))
    mask = np.zeros(depth.shape, dtype=bool)
    mask[idx[best_inl]] = True
    return ScaleEstimate(s, frac, mask)
