"""Correspondence selection from dense forward/backward flow."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import EmptyFlow, TooFewMatches
from .io import FlowField
from .validation import check_same_size

MIN_MATCHES = 8


@dataclass(frozen=True, eq=False)
class MatchSet:
    """2D-2D matches between frame ``i-1`` (``p_prev``) and frame ``i`` (``p_cur``).

    Rows are sorted by ascending ``inconsistency``, ties by the row-major
    index of ``p_cur``. ``n_requested`` records what the caller asked for;
    ``is_short`` flags that fewer usable pixels existed.
    """

    p_prev: np.ndarray
    p_cur: np.ndarray
    inconsistency: np.ndarray
    image_size: tuple[int, int]
    n_requested: int | None = None

    def __post_init__(self):
        p_prev = np.asarray(self.p_prev, dtype=float).reshape(-1, 2)
        p_cur = np.asarray(self.p_cur, dtype=float).reshape(-1, 2)
        e = np.asarray(self.inconsistency, dtype=float).reshape(-1)
        if not (len(p_prev) == len(p_cur) == len(e)):
            raise ValueError("match arrays differ in length")
        for a in (p_prev, p_cur, e):
            a.setflags(write=False)
        object.__setattr__(self, "p_prev", p_prev)
        object.__setattr__(self, "p_cur", p_cur)
        object.__setattr__(self, "inconsistency", e)

    @classmethod
    def from_points(cls, p_prev, p_cur, image_size=(0, 0)) -> MatchSet:
        """Matches with zero inconsistency, for solvers fed from elsewhere."""
        p_cur = np.asarray(p_cur, dtype=float)
        return cls(p_prev, p_cur, np.zeros(len(p_cur)), tuple(image_size))

    def __len__(self) -> int:
        return len(self.p_cur)

    @property
    def is_short(self) -> bool:
        return self.n_requested is not None and len(self) < self.n_requested

    def subset(self, mask) -> MatchSet:
        return MatchSet(self.p_prev[mask], self.p_cur[mask], self.inconsistency[mask], self.image_size)


def _bilinear(field: np.ndarray, valid: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Sample ``field`` (H, W, C) at in-bounds float coordinates.

    Returns the samples and a mask that is False wherever any of the four
    stencil pixels is invalid.
    """
    H, W = valid.shape
    x0 = np.clip(np.floor(x).astype(np.intp), 0, max(W - 2, 0))
    y0 = np.clip(np.floor(y).astype(np.intp), 0, max(H - 2, 0))
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    ax = (x - x0)[..., None]
    ay = (y - y0)[..., None]
    out = ((1 - ax) * (1 - ay) * field[y0, x0] + ax * (1 - ay) * field[y0, x1]
           + (1 - ax) * ay * field[y1, x0] + ax * ay * field[y1, x1])
    ok = valid[y0, x0] & valid[y0, x1] & valid[y1, x0] & valid[y1, x1]
    return out, ok


def fb_inconsistency(fwd: FlowField, bwd: FlowField) -> np.ndarray:
    """Per-pixel forward-backward flow inconsistency in pixels, ``(H, W)``.

    For a pixel ``p`` of frame i, ``e(p) = |F_fwd(p) + F_bwd(p + F_fwd(p))|``
    with ``F_bwd`` sampled bilinearly. Endpoints outside the image, or whose
    stencil touches invalid flow, get ``+inf``.
    """
    W, H = check_same_size(fwd, bwd)
    f_ok = fwd.valid
    b_ok = bwd.valid
    F = np.where(f_ok[..., None], fwd.data, 0).astype(np.float64)
    B = np.where(b_ok[..., None], bwd.data, 0).astype(np.float64)
    v, u = np.mgrid[0:H, 0:W]
    x = u + F[..., 0]
    y = v + F[..., 1]
    inside = f_ok & (x >= 0) & (x <= W - 1) & (y >= 0) & (y <= H - 1)
    err = np.full((H, W), np.inf)
    if not inside.any():
        return err
    sampled, ok = _bilinear(B, b_ok, x[inside], y[inside])
    e = np.linalg.norm(F[inside] + sampled, axis=1)
    err[inside] = np.where(ok, e, np.inf)
    return err


def _candidates(err: np.ndarray, border: int) -> np.ndarray:
    H, W = err.shape
    mask = np.isfinite(err)
    if border > 0:
        inner = np.zeros_like(mask)
        inner[border:H - border, border:W - border] = True
        mask &= inner
    return np.flatnonzero(mask)


def _rank(err_flat: np.ndarray, idx: np.ndarray) -> np.ndarray:
    # idx is ascending, so a stable sort on error keeps row-major tie order
    return idx[np.argsort(err_flat[idx], kind="stable")]


def select_best_n(fwd: FlowField, err: np.ndarray, n: int = 2000, border: int = 10,
                  mode: str = "global", grid: tuple[int, int] = (10, 10)) -> MatchSet:
    """Pick the ``n`` least-inconsistent flow vectors as matches.

    ``mode="uniform"`` splits the image into ``grid`` cells and takes an equal
    quota from each before topping up globally.
    """
    if n < MIN_MATCHES:
        raise ValueError(f"n must be >= {MIN_MATCHES}, got {n}")
    H, W = err.shape
    if (fwd.width, fwd.height) != (W, H):
        raise ValueError("error map and flow differ in size")
    flat = err.reshape(-1)
    idx = _candidates(err, border)
    if len(idx) < MIN_MATCHES:
        raise TooFewMatches(f"only {len(idx)} pixels have finite inconsistency")

    if mode == "global":
        chosen = _rank(flat, idx)[:n]
    elif mode == "uniform":
        gy, gx = grid
        rows, cols = idx // W, idx % W
        cell = (rows * gy // H) * gx + cols * gx // W
        quota = -(-n // (gx * gy))
        picked = []
        for c in range(gx * gy):
            picked.append(_rank(flat, idx[cell == c])[:quota])
        picked = np.sort(np.concatenate(picked))
        if len(picked) < n:
            rest = np.setdiff1d(idx, picked, assume_unique=True)
            picked = np.sort(np.concatenate([picked, _rank(flat, rest)[: n - len(picked)]]))
        chosen = _rank(flat, picked)[:n]
    else:
        raise ValueError(f"unknown selection mode {mode!r}")

    rows, cols = np.divmod(chosen, W)
    p_cur = np.stack([cols, rows], axis=1).astype(float)
    p_prev = p_cur + fwd.data[rows, cols].astype(np.float64)
    return MatchSet(p_prev, p_cur, flat[chosen], (W, H), n_requested=n)


def mean_flow_magnitude(fwd: FlowField, mask: np.ndarray | None = None) -> float:
    """Mean flow vector length over valid pixels (optionally restricted by ``mask``)."""
    valid = fwd.valid if mask is None else fwd.valid & mask
    if not valid.any():
        raise EmptyFlow("no valid flow vectors")
    return float(np.linalg.norm(fwd.data[valid].astype(np.float64), axis=1).mean())
