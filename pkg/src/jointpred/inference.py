"""Message passing on the pairwise MRF and a brute-force reference.

Unary logits are an (A, K) array ``mu`` with ``mu[i, a] = -E_traj(s_i = a)``.
Pair tables map an edge ``(i, j)``, ``i < j``, to a (K, K) array
``upsilon[a, b] = -E_pair(s_i = a, s_j = b)``. All arithmetic is in the log
domain; ``-1e9`` stands in for an infinite energy.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .autodiff import ContractError, logsumexp
from .graph import InteractionGraph

DEFAULT_ITERATIONS = 3
CLAMP_LOGIT = -1e9
MAX_ORACLE_STATES = 10 ** 6
TIE_TOLERANCE = 1e-9


class FeasibilityError(ValueError):
    """The exact joint is too large to enumerate."""


@dataclass
class Beliefs:
    """Normalized node log-marginals (A, K) and pair log-marginals per edge."""

    node: np.ndarray
    pair: dict = field(default_factory=dict)

    def node_probs(self) -> np.ndarray:
        return np.exp(self.node)

    def pair_logits(self, i: int, j: int) -> np.ndarray:
        """(K, K) log-belief for agents (i, j); off-graph pairs use the product of node beliefs."""
        if i > j:
            return self.pair_logits(j, i).T
        if (i, j) in self.pair:
            return self.pair[(i, j)]
        return self.node[i][:, None] + self.node[j][None, :]


@dataclass(frozen=True)
class JointDecode:
    indices: tuple
    score: float


def _tables(graph: InteractionGraph, pair_tables: Mapping, k: int) -> dict:
    out = {}
    for edge in graph.edges:
        if edge not in pair_tables:
            raise ContractError(f"missing pair table for edge {edge}")
        table = np.asarray(getattr(pair_tables[edge], "values", pair_tables[edge]), dtype=np.float64)
        if table.shape != (k, k):
            raise ContractError(f"pair table for {edge} has shape {table.shape}, expected {(k, k)}")
        out[edge] = table
    return out


def _oriented(tables: dict, src: int, dst: int) -> np.ndarray:
    """Table indexed [x_src, x_dst]."""
    return tables[(src, dst)] if src < dst else tables[(dst, src)].T


def _run_messages(graph, unary, tables, iterations, use_max):
    if iterations < 1:
        raise ContractError("need at least one message-passing iteration")
    k = unary.shape[1]
    directed = [(i, j) for i, j in graph.edges] + [(j, i) for i, j in graph.edges]
    msgs = {d: np.zeros(k) for d in directed}
    for _ in range(iterations):
        incoming = unary.copy()
        for (_, dst), m in msgs.items():
            incoming[dst] += m
        new = {}
        for src, dst in directed:
            h = incoming[src] - msgs[(dst, src)]
            scores = h[:, None] + _oriented(tables, src, dst)
            m = scores.max(axis=0) if use_max else logsumexp(scores, axis=0)
            new[(src, dst)] = m - logsumexp(m)
        msgs = new
    incoming = unary.copy()
    for (_, dst), m in msgs.items():
        incoming[dst] += m
    return msgs, incoming


def sum_product(graph: InteractionGraph, unary_logits, pair_tables: Mapping,
                iterations: int = DEFAULT_ITERATIONS) -> Beliefs:
    """Synchronous sum-product; messages start uniform (zero logits)."""
    unary = np.asarray(unary_logits, dtype=np.float64)
    tables = _tables(graph, pair_tables, unary.shape[1])
    msgs, incoming = _run_messages(graph, unary, tables, iterations, use_max=False)
    node = incoming - logsumexp(incoming, axis=1, keepdims=True)
    pair = {}
    for i, j in graph.edges:
        hi = incoming[i] - msgs[(j, i)]
        hj = incoming[j] - msgs[(i, j)]
        cell = hi[:, None] + hj[None, :] + tables[(i, j)]
        pair[(i, j)] = cell - logsumexp(cell)
    return Beliefs(node, pair)


def max_beliefs(graph: InteractionGraph, unary_logits, pair_tables: Mapping,
                iterations: int = DEFAULT_ITERATIONS) -> np.ndarray:
    """Unnormalized max-marginal logits per node."""
    unary = np.asarray(unary_logits, dtype=np.float64)
    tables = _tables(graph, pair_tables, unary.shape[1])
    return _run_messages(graph, unary, tables, iterations, use_max=True)[1]


def _argmax_low(v: np.ndarray, tol: float = TIE_TOLERANCE) -> int:
    top = v.max()
    return int(np.flatnonzero(v >= top - tol * max(1.0, abs(top)))[0])


def joint_score(graph: InteractionGraph, unary_logits, pair_tables: Mapping, state) -> float:
    unary = np.asarray(unary_logits, dtype=np.float64)
    score = float(sum(unary[i, s] for i, s in enumerate(state)))
    for (i, j) in graph.edges:
        table = np.asarray(getattr(pair_tables[(i, j)], "values", pair_tables[(i, j)]))
        score += float(table[state[i], state[j]])
    return score


def max_product(graph: InteractionGraph, unary_logits, pair_tables: Mapping,
                iterations: int = DEFAULT_ITERATIONS) -> JointDecode:
    """Max-product decode.

    Agents are decoded in index order: each takes the lowest-index maximizer of
    its max-marginal given the agents already fixed, then gets clamped. Per-node
    argmax alone can mix two tied optima into an inconsistent state; the
    sequential pass cannot, and on trees it returns the lexicographically
    smallest MAP state.
    """
    unary = np.asarray(unary_logits, dtype=np.float64).copy()
    tables = _tables(graph, pair_tables, unary.shape[1])
    state = []
    for i in range(unary.shape[0]):
        if graph.neighbors(i):
            beliefs = _run_messages(graph, unary, tables, iterations, use_max=True)[1][i]
        else:
            beliefs = unary[i]
        choice = _argmax_low(beliefs)
        state.append(choice)
        unary = conditional_clamp(unary, i, choice)
    state = tuple(state)
    return JointDecode(state, joint_score(graph, unary_logits, tables, state))


def conditional_clamp(unary_logits, agent: int, candidate: int) -> np.ndarray:
    """Copy of the logits with every candidate of ``agent`` except ``candidate`` at -1e9."""
    unary = np.array(unary_logits, dtype=np.float64)
    if not 0 <= candidate < unary.shape[1]:
        raise IndexError(f"candidate {candidate} out of range for K={unary.shape[1]}")
    keep = unary[agent, candidate]
    unary[agent, :] = CLAMP_LOGIT
    unary[agent, candidate] = keep
    return unary


def top_n_joint_pairs(beliefs: Beliefs, edge, n: int = 6) -> list:
    """Top ``n`` cells of a pair belief as ``((a, b), log_prob)``, best first.

    Ties are broken lexicographically in ``(a, b)``.
    """
    i, j = edge
    table = beliefs.pair_logits(i, j)
    k_i, k_j = table.shape
    if n > k_i * k_j:
        warnings.warn(f"n={n} exceeds {k_i * k_j} joint cells; clipping", stacklevel=2)
        n = k_i * k_j
    flat = table.reshape(-1)
    order = np.argsort(-flat, kind="stable")[:n]
    return [((int(c // k_j), int(c % k_j)), float(flat[c])) for c in order]


# -- exact reference --------------------------------------------------------

@dataclass
class ExactJoint:
    """Full joint over K**A states."""

    log_probs: np.ndarray
    log_z: float

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    @property
    def num_agents(self) -> int:
        return self.log_probs.ndim

    @property
    def z(self) -> float:
        return float(np.exp(self.log_z))

    def marginals(self) -> np.ndarray:
        p = self.probs
        axes = range(p.ndim)
        return np.stack([p.sum(axis=tuple(a for a in axes if a != i)) for i in axes])

    def pair_marginal(self, i: int, j: int) -> np.ndarray:
        p = self.probs
        other = tuple(a for a in range(p.ndim) if a not in (i, j))
        m = p.sum(axis=other)
        return m if i < j else m.T

    def argmax(self) -> tuple:
        """MAP state; ties go to the lexicographically smallest state."""
        return tuple(int(v) for v in np.unravel_index(np.argmax(self.log_probs), self.log_probs.shape))

    def log_prob(self, state) -> float:
        return float(self.log_probs[tuple(state)])

    def conditional(self, agent: int, candidate: int) -> "ExactJoint":
        """Joint of all agents given ``s_agent = candidate`` (other rows get zero mass)."""
        logits = np.full_like(self.log_probs, -np.inf)
        index = [slice(None)] * self.log_probs.ndim
        index[agent] = candidate
        index = tuple(index)
        logits[index] = self.log_probs[index]
        lz = float(logsumexp(self.log_probs[index]))
        return ExactJoint(logits - lz, self.log_z + lz)


def brute_force_joint(graph: InteractionGraph, unary_logits, pair_tables: Mapping) -> ExactJoint:
    """Enumerate every joint state and normalize by the partition function."""
    unary = np.asarray(unary_logits, dtype=np.float64)
    n_agents, k = unary.shape
    if k ** n_agents > MAX_ORACLE_STATES:
        raise FeasibilityError(f"K^A = {k}^{n_agents} exceeds {MAX_ORACLE_STATES} states")
    tables = _tables(graph, pair_tables, k)
    neg_energy = np.zeros((k,) * n_agents)
    for i in range(n_agents):
        shape = [1] * n_agents
        shape[i] = k
        neg_energy = neg_energy + unary[i].reshape(shape)
    for (i, j), table in tables.items():
        shape = [1] * n_agents
        shape[i] = shape[j] = k
        neg_energy = neg_energy + table.reshape(shape)
    log_z = float(logsumexp(neg_energy))
    return ExactJoint(neg_energy - log_z, log_z)
