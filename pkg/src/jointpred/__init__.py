"""Joint multi-agent trajectory prediction with a pairwise MRF over candidate trajectories."""

from .evaluation import evaluate, go_stop_candidates
from .graph import InteractionGraph, build_graph
from .inference import brute_force_joint, conditional_clamp, max_product, sum_product, top_n_joint_pairs
from .metrics import MetricReport
from .pipeline import JointPredictor, ModelConfig
from .scene import GeneratorConfig, Scene, generate_dataset, generate_scene, read_dataset, write_dataset
from .training import TrainConfig, train

__all__ = [
    "GeneratorConfig", "InteractionGraph", "JointPredictor", "MetricReport", "ModelConfig", "Scene",
    "TrainConfig", "brute_force_joint", "build_graph", "conditional_clamp", "evaluate", "generate_dataset",
    "generate_scene", "go_stop_candidates", "max_product", "read_dataset", "sum_product", "top_n_joint_pairs",
    "train", "write_dataset",
]
