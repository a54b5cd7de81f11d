"""Dataset-level evaluation of a :class:`JointPredictor`."""

from __future__ import annotations

import numpy as np

from .inference import conditional_clamp, max_product, sum_product
from .metrics import MetricAccumulator, MetricReport, marginal_metrics, overlap_metric, pairwise_joint_metrics
from .pipeline import JointPredictor


def evaluate(model: JointPredictor, scenes, *, graph: str | None = None, potential: str | None = None,
             conditional: bool = False, seed: int = 0, label: str = "") -> MetricReport:
    """Metrics over ``scenes`` in order.

    The overlap metric uses the max-product joint decode, marginal metrics the
    backbone's own candidate probabilities, pairwise metrics the sum-product
    pair beliefs. With ``conditional`` the AV is clamped to its most likely
    candidate before inference.
    """
    acc = MetricAccumulator()
    iterations = model.config.iterations
    for n, scene in enumerate(scenes):
        fp = model.forward(scene, graph=graph, potential=potential, seed=seed * 7919 + n, infer=False)
        unary = fp.candidates.mu
        if conditional:
            av = scene.av_index
            unary = conditional_clamp(unary, av, int(np.argmax(unary[av])))
        tables = fp.table_values()
        beliefs = sum_product(fp.graph, unary, tables, iterations)
        decode = max_product(fp.graph, unary, tables, iterations)
        gt = np.stack([a.future_xy for a in scene.agents])
        valid = np.stack([a.valid for a in scene.agents])
        acc.add(overlap_metric(scene, decode, fp.candidates),
                marginal_metrics(fp.candidates.traj, np.exp(fp.candidates.mu), gt, valid),
                pairwise_joint_metrics(scene, beliefs, fp.candidates))
    config = {"graph": graph or model.config.graph, "potential": potential or model.config.potential,
              "k": model.config.k, "iterations": iterations, "conditional": conditional, "seed": seed}
    return acc.report(label, config)


def go_stop_candidates(scene, tape=None, margin: float = 2.0):
    """Two hand-built candidates per agent of a two-way crossing, with uniform probabilities.

    Candidate 0 keeps the current speed along the current heading; candidate 1
    brakes uniformly to rest ``margin`` metres short of the other agent's lane.
    The crossing point is where the two current heading lines meet.
    """
    from . import autodiff as ad
    from .backbone import CandidateSet
    from .scene import FUTURE_STEPS

    if scene.num_agents != 2:
        raise ValueError("go/stop candidates need exactly two agents")
    tape = tape or ad.Tape()
    poses = [a.current_pose for a in scene.agents]
    dirs = [np.array([np.cos(p.yaw), np.sin(p.yaw)]) for p in poses]
    # p0 + a d0 = p1 + b d1
    lhs = np.column_stack([dirs[0], -dirs[1]])
    rhs = np.array([poses[1].x - poses[0].x, poses[1].y - poses[0].y])
    reach = np.linalg.solve(lhs, rhs) * [1.0, -1.0]
    t = np.arange(1, FUTURE_STEPS + 1) * scene.dt
    traj = np.zeros((2, 2, FUTURE_STEPS, 2))
    for i, agent in enumerate(scene.agents):
        v = float(agent.history[-1, 3])
        other_width = scene.agents[1 - i].width
        stop = max(float(reach[i]) - (agent.length / 2 + other_width / 2 + margin), 0.1)
        decel = v * v / (2 * stop)
        s_stop = np.where(t >= v / decel, stop, v * t - 0.5 * decel * t * t)
        origin = np.array([poses[i].x, poses[i].y])
        traj[i, 0] = origin + (v * t)[:, None] * dirs[i]
        traj[i, 1] = origin + s_stop[:, None] * dirs[i]
    logits = tape.constant(np.full((2, 2), -np.log(2.0)))
    return CandidateSet(tape.constant(traj), logits, poses, [(a.length, a.width) for a in scene.agents],
                        [a.agent_type for a in scene.agents])
