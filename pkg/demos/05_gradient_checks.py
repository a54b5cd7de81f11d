"""The stop-gradient loss has the gradient of the exact joint likelihood.

Run: python3 demos/05_gradient_checks.py
"""
import numpy as np

from jointpred.graph import InteractionGraph
from jointpred.training import gradient_equivalence

rng = np.random.default_rng(3)
graph = InteractionGraph(3, ((0, 1), (1, 2)))
mu = rng.normal(size=(3, 3))
tables = {e: rng.normal(size=(3, 3)) for e in graph.edges}
labels = [2, 0, 1]

ok = gradient_equivalence(graph, mu, tables, labels)
bad = gradient_equivalence(graph, mu, tables, labels, stop_gradient=False)
print("with stop-gradient:    max rel err %.2e" % ok.max_rel_error)
print("without stop-gradient: max rel err %.2e" % bad.max_rel_error)
print("d loss / d mu:\n", np.round(ok.analytic["mu"], 5))
print("finite differences of -log p(labels):\n", np.round(ok.numeric["mu"], 5))
