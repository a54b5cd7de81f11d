"""Slow, independent reference implementations used as test oracles.

Nothing here imports the code under test except plain data types, so an
agreement between these and the library is evidence, not a tautology.
"""

from __future__ import annotations

import cmath
import itertools
import math

import numpy as np


def frame_via_complex(points, x, y, yaw):
    """Agent-frame coordinates computed with complex arithmetic."""
    out = []
    for px, py in np.asarray(points, dtype=float).reshape(-1, 2):
        z = (complex(px, py) - complex(x, y)) * cmath.exp(-1j * yaw)
        out.append((z.real, z.imag))
    return np.array(out).reshape(np.shape(points))


def enumerate_joint(num_agents, edges, unary, tables):
    """Exact joint by looping over every state with itertools.product.

    Returns (probs dict state->p, node marginals (A, K), pair marginals dict).
    """
    unary = np.asarray(unary, dtype=float)
    k = unary.shape[1]
    scores = {}
    for state in itertools.product(range(k), repeat=num_agents):
        s = sum(unary[i, state[i]] for i in range(num_agents))
        for (i, j) in edges:
            s += tables[(i, j)][state[i], state[j]]
        scores[state] = s
    top = max(scores.values())
    weights = {st: math.exp(v - top) for st, v in scores.items()}
    z = sum(weights.values())
    probs = {st: w / z for st, w in weights.items()}
    node = np.zeros((num_agents, k))
    pair = {e: np.zeros((k, k)) for e in edges}
    for st, p in probs.items():
        for i in range(num_agents):
            node[i, st[i]] += p
        for (i, j) in edges:
            pair[(i, j)][st[i], st[j]] += p
    return probs, node, pair, scores


def map_state(scores, tol=1e-9):
    """Lexicographically smallest state among those within ``tol`` of the best score."""
    best = max(scores.values())
    return min(st for st, v in scores.items() if v >= best - tol * max(1.0, abs(best)))


def random_tree(rng, num_nodes):
    """Edges of a random labelled tree (each node > 0 attaches to an earlier node)."""
    edges = []
    for n in range(1, num_nodes):
        parent = int(rng.integers(n))
        edges.append((parent, n))
    return tuple(sorted(edges))


def box_corners(cx, cy, yaw, length, width):
    c, s = math.cos(yaw), math.sin(yaw)
    out = []
    for dx, dy in ((0.5, 0.5), (-0.5, 0.5), (-0.5, -0.5), (0.5, -0.5)):
        lx, ly = dx * length, dy * width
        out.append((cx + c * lx - s * ly, cy + s * lx + c * ly))
    return out


def point_in_box(px, py, cx, cy, yaw, length, width, slack=1e-9):
    c, s = math.cos(yaw), math.sin(yaw)
    dx, dy = px - cx, py - cy
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    return abs(lx) <= length / 2 + slack and abs(ly) <= width / 2 + slack


def boxes_overlap_sampled(a, b, n=80):
    """Dense point sampling: some grid point of one box (edges included) lies
    inside the other. Boxes are (cx, cy, yaw, length, width)."""
    u = np.linspace(-0.5, 0.5, n)
    gu, gv = np.meshgrid(u, u)
    for p, q in ((a, b), (b, a)):
        cx, cy, yaw, length, width = p
        c, s = math.cos(yaw), math.sin(yaw)
        lx, ly = gu * length, gv * width
        px, py = cx + c * lx - s * ly, cy + s * lx + c * ly
        qx, qy, qyaw, ql, qw = q
        cq, sq = math.cos(qyaw), math.sin(qyaw)
        dx, dy = px - qx, py - qy
        inside = (np.abs(cq * dx + sq * dy) <= ql / 2 + 1e-9) & (np.abs(-sq * dx + cq * dy) <= qw / 2 + 1e-9)
        if inside.any():
            return True
    return False


def ade_fde(cand, gt, valid):
    steps = [t for t in range(len(gt)) if valid[t]]
    d = [math.hypot(cand[t][0] - gt[t][0], cand[t][1] - gt[t][1]) for t in steps]
    return sum(d) / len(d), d[-1]


def average_precision_reference(scored):
    """AP from a list of (score, is_tp) with total positives = number of TPs possible.

    Straight from the definition: mean over true positives of precision at
    their rank, with ties kept in input order.
    """
    order = sorted(range(len(scored)), key=lambda n: (-scored[n][0], n))
    hits = 0
    precisions = []
    for rank, n in enumerate(order, start=1):
        if scored[n][1]:
            hits += 1
            precisions.append(hits / rank)
    return precisions
