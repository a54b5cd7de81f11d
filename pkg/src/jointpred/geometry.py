"""Oriented boxes and the separating-axis overlap test."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class OrientedBox:
    x: float
    y: float
    yaw: float
    length: float
    width: float

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ValueError("box length and width must be positive")

    def corners(self) -> np.ndarray:
        return box_corners(np.array([[self.x, self.y]]), np.array([self.yaw]),
                           self.length, self.width)[0]


def box_corners(centers: np.ndarray, yaws: np.ndarray, length, width) -> np.ndarray:
    """(N, 4, 2) corners for N boxes sharing dimensions."""
    c, s = np.cos(yaws), np.sin(yaws)
    fwd = np.stack([c, s], axis=-1) * (length / 2)
    left = np.stack([-s, c], axis=-1) * (width / 2)
    return np.stack([centers + fwd + left, centers - fwd + left,
                     centers - fwd - left, centers + fwd - left], axis=-2)


def _axes(yaws):
    c, s = np.cos(yaws), np.sin(yaws)
    return np.stack([np.stack([c, s], -1), np.stack([-s, c], -1)], axis=-2)  # (N, 2, 2)


def boxes_overlap_batch(centers_a, yaws_a, dims_a, centers_b, yaws_b, dims_b) -> np.ndarray:
    """Elementwise SAT test for N box pairs. Touching counts as overlap."""
    ca = box_corners(centers_a, yaws_a, *dims_a)
    cb = box_corners(centers_b, yaws_b, *dims_b)
    axes = np.concatenate([_axes(yaws_a), _axes(yaws_b)], axis=-2)  # (N, 4, 2)
    pa = np.einsum("nkd,ncd->nkc", axes, ca)
    pb = np.einsum("nkd,ncd->nkc", axes, cb)
    separated = (pa.max(-1) < pb.min(-1)) | (pb.max(-1) < pa.min(-1))
    return ~separated.any(-1)


def boxes_overlap(a: OrientedBox, b: OrientedBox) -> bool:
    return bool(boxes_overlap_batch(
        np.array([[a.x, a.y]]), np.array([a.yaw]), (a.length, a.width),
        np.array([[b.x, b.y]]), np.array([b.yaw]), (b.length, b.width))[0])


def headings_from_waypoints(traj: np.ndarray, fallback: float = 0.0) -> np.ndarray:
    """Heading per waypoint from consecutive differences.

    The last segment's heading is reused at the final point. Zero-length
    segments inherit the previous heading (``fallback`` before any motion).
    Works on (..., T, 2).
    """
    traj = np.asarray(traj, dtype=np.float64)
    lead = traj.shape[:-2]
    steps = traj.shape[-2]
    d = np.diff(traj, axis=-2).reshape(-1, steps - 1, 2)
    raw = np.arctan2(d[..., 1], d[..., 0])
    moving = np.hypot(d[..., 0], d[..., 1]) > 1e-6
    cols = np.arange(steps - 1)
    last = np.maximum.accumulate(np.where(moving, cols, -1), axis=1)
    first = np.where(moving.any(axis=1), moving.argmax(axis=1), -1)
    # a stationary prefix takes the first moving segment's heading
    src = np.where(last >= 0, last, first[:, None])
    fb = np.broadcast_to(np.asarray(fallback, dtype=np.float64), lead).reshape(-1)
    seg = np.where(src >= 0, np.take_along_axis(raw, np.maximum(src, 0), axis=1), fb[:, None])
    out = np.concatenate([seg, seg[:, -1:]], axis=1)
    return out.reshape(lead + (steps,))


def trajectories_overlap(traj_i, traj_j, dims_i, dims_j, *, yaw_i=None, yaw_j=None,
                         heading_i: float = 0.0, heading_j: float = 0.0) -> bool:
    """True iff the two agents' boxes intersect at any common timestep.

    Headings are derived from waypoints unless ``yaw_i``/``yaw_j`` are given;
    ``heading_*`` seed the derivation for trajectories that never move.
    """
    ti = np.asarray(traj_i, dtype=np.float64)
    tj = np.asarray(traj_j, dtype=np.float64)
    if ti.shape != tj.shape:
        raise ValueError(f"trajectory shapes differ: {ti.shape} vs {tj.shape}")
    yi = headings_from_waypoints(ti, heading_i) if yaw_i is None else np.asarray(yaw_i)
    yj = headings_from_waypoints(tj, heading_j) if yaw_j is None else np.asarray(yaw_j)
    # cheap reject on bounding circles before the SAT pass
    reach = 0.5 * (np.hypot(*dims_i) + np.hypot(*dims_j))
    close = np.hypot(*(ti - tj).T) <= reach + 1e-9
    if not close.any():
        return False
    return bool(boxes_overlap_batch(ti[close], yi[close], dims_i, tj[close], yj[close], dims_j).any())


def pairwise_overlap_matrix(cands_i, cands_j, dims_i, dims_j, heading_i=0.0, heading_j=0.0) -> np.ndarray:
    """(K_i, K_j) boolean matrix of :func:`trajectories_overlap` over candidate pairs."""
    ci = np.asarray(cands_i, dtype=np.float64)
    cj = np.asarray(cands_j, dtype=np.float64)
    yi = headings_from_waypoints(ci, heading_i)
    yj = headings_from_waypoints(cj, heading_j)
    out = np.zeros((ci.shape[0], cj.shape[0]), dtype=bool)
    for a in range(ci.shape[0]):
        for b in range(cj.shape[0]):
            out[a, b] = trajectories_overlap(ci[a], cj[b], dims_i, dims_j, yaw_i=yi[a], yaw_j=yj[b])
    return out
