"""Message passing on a small random tree against exhaustive enumeration.

Run: python3 demos/02_inference_vs_enumeration.py
"""
import numpy as np

from jointpred.graph import InteractionGraph
from jointpred.inference import brute_force_joint, conditional_clamp, max_product, sum_product

rng = np.random.default_rng(0)
graph = InteractionGraph(4, ((0, 1), (1, 2), (1, 3)))
mu = rng.normal(0, 1.5, (4, 3))                       # unary log-potentials
tables = {e: rng.normal(0, 1.5, (3, 3)) for e in graph.edges}

beliefs = sum_product(graph, mu, tables, iterations=graph.diameter())
exact = brute_force_joint(graph, mu, tables)
print("node marginals (message passing):\n", np.round(np.exp(beliefs.node), 4))
print("max abs diff to enumeration: %.2e" % np.abs(np.exp(beliefs.node) - exact.marginals()).max())

decode = max_product(graph, mu, tables, iterations=graph.diameter())
print("MAP decode", decode.indices, "oracle", exact.argmax())

# conditioning: pin agent 0 to candidate 2 and infer the rest
clamped = sum_product(graph, conditional_clamp(mu, 0, 2), tables, graph.diameter())
oracle = exact.conditional(0, 2).marginals()
print("conditional max abs diff: %.2e" % np.abs(np.exp(clamped.node) - oracle).max())

# a loopy graph: beliefs are only approximate now
loopy = InteractionGraph(3, ((0, 1), (0, 2), (1, 2)))
tables = {e: rng.normal(0, 2, (3, 3)) for e in loopy.edges}
approx = np.exp(sum_product(loopy, mu[:3], tables, iterations=10).node)
print("loopy error after 10 iterations: %.3f" %
      np.abs(approx - brute_force_joint(loopy, mu[:3], tables).marginals()).max())
