"""Learned and heuristic K x K pairwise potential tables."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .backbone import POSITION_SCALE, CandidateSet
from .geometry import pairwise_overlap_matrix
from .scene import FUTURE_STEPS, Pose2, to_agent_frame

INNER_LAYERS = ("pair.inner.0", "pair.inner.1")
OUTER_LAYERS = ("pair.outer.0", "pair.outer.1", "pair.outer.2")
INNER_WIDTHS = (128, 64)
OUTER_WIDTHS = (128, 64)
CONFLICT_LOGIT = -1e9


@dataclass
class PairPotentialTable:
    """Logits ``upsilon[a, b] = -E_pair(s_i = a, s_j = b)`` for edge (i, j), i < j.

    ``logits`` is a Var for learned tables and a plain array for heuristic ones.
    """

    edge: tuple[int, int]
    logits: object

    @property
    def values(self) -> np.ndarray:
        return self.logits.value if isinstance(self.logits, ad.Var) else np.asarray(self.logits)


def init_pair_params(params: ad.ParamStore, rng: np.random.Generator,
                     horizon: int = FUTURE_STEPS) -> None:
    """Shared inner MLP and an outer MLP whose scalar head starts at zero."""
    d_in = 4 * horizon
    params.add_dense(INNER_LAYERS[0], d_in, INNER_WIDTHS[0], rng)
    params.add_dense(INNER_LAYERS[1], INNER_WIDTHS[0], INNER_WIDTHS[1], rng)
    params.add_dense(OUTER_LAYERS[0], 2 * INNER_WIDTHS[1], OUTER_WIDTHS[0], rng)
    params.add_dense(OUTER_LAYERS[1], OUTER_WIDTHS[0], OUTER_WIDTHS[1], rng)
    params.add_dense(OUTER_LAYERS[2], OUTER_WIDTHS[1], 1, rng, zero=True)


def project_pair(cands_i, cands_j, pose_i: Pose2, pose_j: Pose2):
    """Return ``(s_i@j, s_j@i)``: each agent's world candidates in the other's frame."""
    return to_agent_frame(cands_i, pose_j), to_agent_frame(cands_j, pose_i)


def _frame_rows(traj: ad.Var, pose: Pose2) -> ad.Var:
    """Var (K, T, 2) world -> (K, 2T) in the frame of ``pose``, scaled."""
    k, horizon = traj.value.shape[:2]
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    rot = np.array([[c, -s], [s, c]]) * POSITION_SCALE
    shift = -np.array([pose.x, pose.y]) @ rot
    rows = ad.affine_rows(traj.reshape(k * horizon, 2), rot, shift)
    return rows.reshape(k, 2 * horizon)


def compute_pair_table(edge, candidates: CandidateSet, params: ad.ParamStore,
                       tape: ad.Tape) -> PairPotentialTable:
    i, j = edge
    if not i < j:
        raise ad.ContractError(f"edge must satisfy i < j, got {edge}")
    traj = candidates.trajectories
    k = candidates.k
    expected = params[f"{INNER_LAYERS[0]}.W"].shape[0]
    if 4 * traj.value.shape[2] != expected:
        raise ad.DimensionError(
            f"pair MLP expects {expected} inputs, candidates give {4 * traj.value.shape[2]}")
    s_i, s_j = traj[i], traj[j]
    pose_i, pose_j = candidates.poses[i], candidates.poses[j]
    i_at_i, j_at_i = _frame_rows(s_i, pose_i), _frame_rows(s_j, pose_i)
    i_at_j, j_at_j = _frame_rows(s_i, pose_j), _frame_rows(s_j, pose_j)
    # cell (a, b) sits at row a * K + b
    rows_a = np.repeat(np.arange(k), k)
    rows_b = np.tile(np.arange(k), k)
    x_i = ad.concat([j_at_i[rows_b], i_at_i[rows_a]], axis=1)
    x_j = ad.concat([i_at_j[rows_a], j_at_j[rows_b]], axis=1)
    f_i = ad.mlp_forward(x_i, INNER_LAYERS, params, tape)
    f_j = ad.mlp_forward(x_j, INNER_LAYERS, params, tape)
    energy = ad.mlp_forward(ad.concat([f_i, f_j], axis=1), OUTER_LAYERS, params, tape)
    return PairPotentialTable((i, j), (-energy).reshape(k, k))


def heuristic_pair_table(edge, candidates: CandidateSet) -> PairPotentialTable:
    """``-1e9`` where the two candidates' boxes overlap at some step, else 0."""
    i, j = edge
    traj = candidates.traj
    overlap = pairwise_overlap_matrix(traj[i], traj[j], candidates.dims[i], candidates.dims[j],
                                      candidates.poses[i].yaw, candidates.poses[j].yaw)
    return PairPotentialTable((i, j), np.where(overlap, CONFLICT_LOGIT, 0.0))
