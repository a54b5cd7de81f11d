"""Overlap, marginal and pairwise-joint forecasting metrics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from itertools import combinations

import numpy as np

from .geometry import OrientedBox, boxes_overlap, trajectories_overlap  # noqa: F401  (re-exported)
from .inference import Beliefs, JointDecode, top_n_joint_pairs

MISS_THRESHOLD = 2.0
PAIR_RADIUS = 10.0
TOP_JOINTS = 6

METRIC_COLUMNS = ("overlap_all", "overlap_av", "minADE", "minFDE", "miss_rate", "map",
                  "pair_minSADE", "pair_minSFDE", "pair_sMissRate")


def overlap_metric(scene, decode: JointDecode, candidates) -> tuple[int, int]:
    """Overlapping agent pairs among the decoded trajectories: (all pairs, pairs with the AV)."""
    traj = candidates.traj
    sel = [traj[i, s] for i, s in enumerate(decode.indices)]
    av = scene.av_index
    total = with_av = 0
    for i, j in combinations(range(scene.num_agents), 2):
        if trajectories_overlap(sel[i], sel[j], candidates.dims[i], candidates.dims[j],
                                heading_i=candidates.poses[i].yaw, heading_j=candidates.poses[j].yaw):
            total += 1
            with_av += av in (i, j)
    return total, with_av


def displacement(cands, gt, valid):
    """(K,) ADE and FDE of each candidate over valid steps; FDE at the last valid step."""
    steps = np.flatnonzero(valid)
    d = np.linalg.norm(np.asarray(cands)[:, steps] - np.asarray(gt)[steps], axis=-1)
    return d.mean(axis=1), d[:, -1]


@dataclass
class MarginalResult:
    min_ade: list = field(default_factory=list)
    min_fde: list = field(default_factory=list)
    miss: list = field(default_factory=list)
    ranked: list = field(default_factory=list)  # (prob, is_true_positive)
    positives: int = 0

    def merge(self, other: "MarginalResult") -> None:
        self.min_ade += other.min_ade
        self.min_fde += other.min_fde
        self.miss += other.miss
        self.ranked += other.ranked
        self.positives += other.positives

    def summary(self) -> tuple:
        if not self.min_ade:
            return None, None, None, None
        return (float(np.mean(self.min_ade)), float(np.mean(self.min_fde)),
                float(np.mean(self.miss)), average_precision(self.ranked, self.positives))


def average_precision(ranked, positives: int) -> float:
    """Non-interpolated AP over confidence-ranked predictions (stable order on ties)."""
    if positives == 0:
        return 0.0
    order = sorted(range(len(ranked)), key=lambda n: -ranked[n][0])
    tp = 0
    precision_sum = 0.0
    for rank, n in enumerate(order, start=1):
        if ranked[n][1]:
            tp += 1
            precision_sum += tp / rank
    return precision_sum / positives


def marginal_metrics(candidates, probs, gt, valid=None, threshold: float = MISS_THRESHOLD) -> MarginalResult:
    """Per-agent minADE / minFDE / miss and the ranked list feeding mAP.

    ``candidates`` (A, K, T, 2), ``probs`` (A, K), ``gt`` (A, T, 2). The first
    non-missing candidate in probability order is the agent's true positive;
    every other candidate is a false positive.
    """
    cands = np.asarray(candidates, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    valid = np.ones(gt.shape[:2], dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    out = MarginalResult()
    for i in range(cands.shape[0]):
        if not valid[i].any():
            continue
        ade, fde = displacement(cands[i], gt[i], valid[i])
        out.min_ade.append(float(ade.min()))
        out.min_fde.append(float(fde.min()))
        out.miss.append(bool(fde.min() > threshold))
        out.positives += 1
        order = np.argsort(-probs[i], kind="stable")
        found = False
        for c in order:
            hit = (not found) and fde[c] <= threshold
            found = found or hit
            out.ranked.append((float(probs[i, c]), bool(hit)))
    return out


@dataclass
class PairResult:
    sade: list = field(default_factory=list)
    sfde: list = field(default_factory=list)
    smiss: list = field(default_factory=list)

    def merge(self, other: "PairResult") -> None:
        self.sade += other.sade
        self.sfde += other.sfde
        self.smiss += other.smiss

    def summary(self) -> tuple:
        if not self.sade:
            return None, None, None
        return float(np.mean(self.sade)), float(np.mean(self.sfde)), float(np.mean(self.smiss))


def interacting_pairs(scene, radius: float = PAIR_RADIUS) -> list[tuple[int, int]]:
    """Pairs whose ground-truth centers come within ``radius`` at some common valid step."""
    out = []
    for i, j in combinations(range(scene.num_agents), 2):
        a, b = scene.agents[i], scene.agents[j]
        both = a.valid & b.valid
        if not both.any():
            continue
        d = np.linalg.norm(a.future_xy[both] - b.future_xy[both], axis=-1)
        if d.min() <= radius:
            out.append((i, j))
    return out


def pairwise_joint_metrics(scene, beliefs: Beliefs, candidates, threshold: float = MISS_THRESHOLD,
                           n: int = TOP_JOINTS, radius: float = PAIR_RADIUS) -> PairResult:
    """Scene-level minSADE / minSFDE / sMiss over the top-n joints of each interacting pair.

    A pair misses when no top-n joint has both agents within ``threshold`` at the
    final step. Pairs with no common valid step are skipped.
    """
    traj = np.asarray(getattr(candidates, "traj", candidates))
    out = PairResult()
    for i, j in interacting_pairs(scene, radius):
        a, b = scene.agents[i], scene.agents[j]
        ade_i, fde_i = displacement(traj[i], a.future_xy, a.valid)
        ade_j, fde_j = displacement(traj[j], b.future_xy, b.valid)
        joints = top_n_joint_pairs(beliefs, (i, j), min(n, traj.shape[1] ** 2))
        sade = [0.5 * (ade_i[x] + ade_j[y]) for (x, y), _ in joints]
        sfde = [0.5 * (fde_i[x] + fde_j[y]) for (x, y), _ in joints]
        worst = [max(fde_i[x], fde_j[y]) for (x, y), _ in joints]
        out.sade.append(float(min(sade)))
        out.sfde.append(float(min(sfde)))
        out.smiss.append(bool(min(worst) > threshold))
    return out


@dataclass
class MetricReport:
    overlap_all: float
    overlap_av: float
    minADE: float | None
    minFDE: float | None
    miss_rate: float | None
    map: float | None
    pair_minSADE: float | None
    pair_minSFDE: float | None
    pair_sMissRate: float | None
    num_scenes: int = 0
    num_agents: int = 0
    num_pairs: int = 0
    label: str = ""
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(**d)


class MetricAccumulator:
    """Collects per-scene results; aggregation is in insertion order."""

    def __init__(self):
        self.overlaps: list[tuple[int, int]] = []
        self.marginal = MarginalResult()
        self.pairs = PairResult()

    def add(self, overlaps, marginal: MarginalResult, pairs: PairResult) -> None:
        self.overlaps.append(tuple(overlaps))
        self.marginal.merge(marginal)
        self.pairs.merge(pairs)

    def report(self, label: str = "", config: dict | None = None) -> MetricReport:
        ov = np.array(self.overlaps, dtype=np.float64).reshape(-1, 2)
        overlap_all, overlap_av = (ov.mean(axis=0).tolist() if len(ov) else (0.0, 0.0))
        min_ade, min_fde, miss, mean_ap = self.marginal.summary()
        sade, sfde, smiss = self.pairs.summary()
        return MetricReport(overlap_all, overlap_av, min_ade, min_fde, miss, mean_ap,
                            sade, sfde, smiss, num_scenes=len(ov),
                            num_agents=len(self.marginal.min_ade), num_pairs=len(self.pairs.sade),
                            label=label, config=dict(config or {}))
