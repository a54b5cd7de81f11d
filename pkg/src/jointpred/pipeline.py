"""The joint predictor: backbone, interaction graph, pair potentials and inference for one scene."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .backbone import AnchorSet, CandidateSet, build_anchors, init_backbone_params, predict_candidates
from .graph import InteractionGraph, build_graph, canonical_graph_type
from .inference import DEFAULT_ITERATIONS, Beliefs, sum_product
from .pairwise import PairPotentialTable, compute_pair_table, heuristic_pair_table, init_pair_params
from .scene import ConfigurationError, Scene

POTENTIAL_MODES = ("learned", "heuristic", "none")


@dataclass
class ModelConfig:
    k: int = 6
    graph: str = "dynamic"
    potential: str = "learned"
    iterations: int = DEFAULT_ITERATIONS

    def __post_init__(self):
        self.graph = canonical_graph_type(self.graph)
        if self.potential not in POTENTIAL_MODES:
            raise ConfigurationError(f"potential must be one of {POTENTIAL_MODES}, got {self.potential!r}")
        if self.k < 2:
            raise ConfigurationError("K must be at least 2")
        if self.iterations < 1:
            raise ConfigurationError("iterations must be at least 1")


@dataclass
class ForwardPass:
    candidates: CandidateSet
    graph: InteractionGraph
    tables: dict = field(default_factory=dict)
    beliefs: Beliefs | None = None

    def table_values(self) -> dict:
        return {edge: t.values for edge, t in self.tables.items()}


def init_params(k: int, seed: int) -> ad.ParamStore:
    """Backbone and pair parameters from independent seeded streams.

    The backbone stream does not depend on whether pair weights are used,
    so models that differ only in graph type start from identical backbones.
    """
    params = ad.ParamStore()
    init_backbone_params(params, k, np.random.default_rng([seed, 0]))
    init_pair_params(params, np.random.default_rng([seed, 1]))
    return params


class JointPredictor:
    """Bundles parameters, anchors and a :class:`ModelConfig`."""

    def __init__(self, config: ModelConfig | None = None, params: ad.ParamStore | None = None,
                 seed: int = 0, anchors: AnchorSet | None = None):
        self.config = config or ModelConfig()
        self.params = params if params is not None else init_params(self.config.k, seed)
        self.anchors = anchors or build_anchors(self.config.k)

    def forward(self, scene: Scene, tape: ad.Tape | None = None, *, graph: str | None = None,
                potential: str | None = None, seed: int = 0, infer: bool = True) -> ForwardPass:
        tape = tape or ad.Tape()
        graph_type = canonical_graph_type(graph or self.config.graph)
        potential = potential or self.config.potential
        candidates = predict_candidates(scene, self.anchors, self.params, tape)
        if potential == "none":
            graph_type = "none"
        g = build_graph(graph_type, scene, candidates, seed)
        if potential == "learned":
            tables = {e: compute_pair_table(e, candidates, self.params, tape) for e in g.edges}
        else:
            tables = {e: heuristic_pair_table(e, candidates) for e in g.edges}
        fp = ForwardPass(candidates, g, tables)
        if infer:
            fp.beliefs = sum_product(g, candidates.mu, fp.table_values(), self.config.iterations)
        return fp


def pair_tables_as_arrays(tables: dict[tuple, PairPotentialTable]) -> dict:
    return {edge: t.values for edge, t in tables.items()}
