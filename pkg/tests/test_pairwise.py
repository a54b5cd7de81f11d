import math

import numpy as np
import pytest

from jointpred import autodiff as ad
from jointpred.backbone import POSITION_SCALE, CandidateSet
from jointpred.pairwise import (CONFLICT_LOGIT, INNER_LAYERS, OUTER_LAYERS, compute_pair_table,
                                heuristic_pair_table, project_pair)
from jointpred.pipeline import init_params
from jointpred.scene import Pose2, from_agent_frame, to_agent_frame
from jointpred.training import jittered_params

VEH = (4.5, 2.0)


def straight(start, heading, speeds, steps=80):
    t = np.arange(1, steps + 1) * 0.1
    return np.stack([np.stack([start[0] + v * t * math.cos(heading), start[1] + v * t * math.sin(heading)], -1)
                     for v in speeds])


def candidate_set(trajs, poses, k=None, tape=None):
    tape = tape or ad.Tape()
    trajs = np.asarray(trajs, dtype=float)
    k = trajs.shape[1]
    logits = ad.log_softmax(tape.constant(np.zeros((trajs.shape[0], k))))
    return CandidateSet(tape.constant(trajs), logits, list(poses), [VEH] * len(poses), ["vehicle"] * len(poses))


def random_pair(rng, k=3):
    poses = [Pose2(*rng.uniform(-20, 20, 2), rng.uniform(-3, 3)) for _ in range(2)]
    trajs = np.stack([np.stack([np.cumsum(rng.normal(0.8, 0.3, (80, 2)), axis=0) @ np.array(
        [[math.cos(p.yaw), math.sin(p.yaw)], [-math.sin(p.yaw), math.cos(p.yaw)]]) + [p.x, p.y]
        for _ in range(k)]) for p in poses])
    return trajs, poses


def learned(trajs, poses, params):
    tape = ad.Tape()
    return compute_pair_table((0, 1), candidate_set(trajs, poses, tape=tape), params, tape)


def mlp_np(x, names, params):
    for n, name in enumerate(names):
        x = x @ params[f"{name}.W"] + params[f"{name}.b"]
        if n < len(names) - 1:
            x = np.maximum(x, 0)
    return x


class TestProjection:
    def test_shared_pose(self):
        rng = np.random.default_rng(0)
        trajs, poses = random_pair(rng)
        pose = poses[0]
        i_at_j, _ = project_pair(trajs[0], trajs[1], pose, pose)
        assert np.allclose(i_at_j, to_agent_frame(trajs[0], pose), atol=1e-12)

    def test_inverse(self):
        rng = np.random.default_rng(1)
        trajs, poses = random_pair(rng)
        i_at_j, j_at_i = project_pair(trajs[0], trajs[1], *poses)
        assert np.abs(from_agent_frame(i_at_j, poses[1]) - trajs[0]).max() < 1e-10
        assert np.abs(from_agent_frame(j_at_i, poses[0]) - trajs[1]).max() < 1e-10

    def test_distances_preserved(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            trajs, poses = random_pair(rng)
            i_at_j, _ = project_pair(trajs[0], trajs[1], *poses)
            j_at_j = to_agent_frame(trajs[1], poses[1])
            world = np.linalg.norm(trajs[0] - trajs[1], axis=-1)
            assert np.abs(np.linalg.norm(i_at_j - j_at_j, axis=-1) - world).max() < 1e-9


class TestLearnedTable:
    def test_fresh_outer_head_gives_zero_table(self):
        rng = np.random.default_rng(3)
        trajs, poses = random_pair(rng, k=6)
        table = learned(trajs, poses, init_params(6, 0))
        assert table.values.shape == (6, 6)
        assert np.array_equal(table.values, np.zeros((6, 6)))

    def test_cell_formula_vs_numpy(self):
        rng = np.random.default_rng(4)
        trajs, poses = random_pair(rng, k=3)
        params = jittered_params(3, 1)
        table = learned(trajs, poses, params).values
        for a in range(3):
            for b in range(3):
                flat = lambda tr, pose: (to_agent_frame(tr, pose) * POSITION_SCALE).reshape(-1)
                x_i = np.concatenate([flat(trajs[1, b], poses[0]), flat(trajs[0, a], poses[0])])
                x_j = np.concatenate([flat(trajs[0, a], poses[1]), flat(trajs[1, b], poses[1])])
                f = np.concatenate([mlp_np(x_i, INNER_LAYERS, params), mlp_np(x_j, INNER_LAYERS, params)])
                assert table[a, b] == pytest.approx(-mlp_np(f, OUTER_LAYERS, params)[0], abs=1e-10)

    def test_edge_order(self):
        rng = np.random.default_rng(5)
        trajs, poses = random_pair(rng)
        with pytest.raises(ad.ContractError):
            compute_pair_table((1, 0), candidate_set(trajs, poses), init_params(3, 0), ad.Tape())

    def test_gradient_into_shared_inner_weights(self):
        rng = np.random.default_rng(6)
        trajs, poses = random_pair(rng, k=2)
        params = jittered_params(2, 3)

        def loss_fn(p, tape):
            table = compute_pair_table((0, 1), candidate_set(trajs, poses, tape=tape), p, tape)
            return table.logits[(1, 0)]

        res = ad.finite_diff_check(loss_fn, params, 1e-6, names=[f"{n}.{s}" for n in INNER_LAYERS for s in "Wb"],
                                   max_entries=40, skip_kinks=True)
        assert res.checked > 100
        assert res.max_rel_error < 1e-5

    def test_row_permutation(self):
        rng = np.random.default_rng(7)
        trajs, poses = random_pair(rng, k=4)
        params = jittered_params(4, 2)
        perm = np.array([2, 0, 3, 1])
        base = learned(trajs, poses, params).values
        swapped = trajs.copy()
        swapped[0] = trajs[0, perm]
        moved = learned(swapped, poses, params).values
        assert np.abs(moved - base[perm]).max() < 1e-12

    def test_rigid_transform_invariance(self):
        rng = np.random.default_rng(8)
        trajs, poses = random_pair(rng, k=3)
        params = jittered_params(3, 4)
        base = learned(trajs, poses, params).values
        rot, shift = -2.1, np.array([300.0, -120.0])
        c, s = math.cos(rot), math.sin(rot)
        moved_trajs = trajs @ np.array([[c, -s], [s, c]]).T + shift
        moved_poses = [Pose2(*(np.array([[c, -s], [s, c]]) @ [p.x, p.y] + shift), p.yaw + rot) for p in poses]
        moved = learned(moved_trajs, moved_poses, params).values
        assert np.abs(moved - base).max() < 1e-9


class TestHeuristicTable:
    def test_parallel_lanes(self):
        trajs = np.stack([straight((0, 0), 0.0, [5, 10, 15]), straight((0, 10), 0.0, [5, 10, 15])])
        table = heuristic_pair_table((0, 1), candidate_set(trajs, [Pose2(0, 0, 0), Pose2(0, 10, 0)])).values
        assert np.array_equal(table, np.zeros((3, 3)))

    def test_head_on(self):
        # agent 1 drives toward agent 0 in the same lane; candidate 0 of each is a stop
        a = np.stack([np.zeros((80, 2)) + [0.1, 0], straight((0, 0), 0.0, [10])[0]])
        b = np.stack([np.zeros((80, 2)) + [99.9, 0], straight((100, 0), math.pi, [10])[0]])
        table = heuristic_pair_table((0, 1), candidate_set(np.stack([a, b]), [Pose2(0, 0, 0),
                                                                              Pose2(100, 0, math.pi)])).values
        assert table[1, 1] == CONFLICT_LOGIT
        assert table[0, 0] == 0.0
        assert set(np.unique(table)) <= {0.0, CONFLICT_LOGIT}
