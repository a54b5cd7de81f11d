"""Toy anchor-plus-offset backbone producing K candidates and unary logits per agent."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .scene import AGENT_TYPES, DT, FUTURE_STEPS, HISTORY_STEPS, AgentTrack, ConfigurationError, Scene, to_agent_frame

POSITION_SCALE = 0.1
SPEED_SCALE = 0.1
FEATURE_DIM = 2 * HISTORY_STEPS + 2 + len(AGENT_TYPES)
HIDDEN = 64
OFFSET_SCALE = 3.0

OFFSET_LAYERS = ("backbone.offset.0", "backbone.offset.1")
LOGIT_LAYERS = ("backbone.logit.0", "backbone.logit.1")

# nominal speed (m/s) and turn radius (m) of the anchor templates per type
ANCHOR_KINEMATICS = {
    "vehicle": (10.0, 15.0),
    "cyclist": (4.5, 8.0),
    "pedestrian": (1.4, 3.0),
}
ANCHOR_KINDS = ("straight", "hard_stop", "left", "right", "slow", "accelerate")


def extract_features(track: AgentTrack) -> np.ndarray:
    """Fixed-length agent-centric feature vector.

    Layout: 11 history positions in the agent frame (x, y interleaved, scaled by
    :data:`POSITION_SCALE`), current speed, yaw rate (rad/s), agent-type one-hot.
    """
    hist = track.history
    pos = to_agent_frame(hist[:, :2], track.current_pose)
    dyaw = math.remainder(hist[-1, 2] - hist[-2, 2], 2 * math.pi)
    onehot = np.zeros(len(AGENT_TYPES))
    onehot[AGENT_TYPES.index(track.agent_type)] = 1.0
    return np.concatenate([pos.reshape(-1) * POSITION_SCALE,
                           [hist[-1, 3] * SPEED_SCALE, dyaw / DT], onehot])


def _anchor(kind: str, speed: float, radius: float, horizon: int) -> np.ndarray:
    t = np.arange(1, horizon + 1) * DT
    t_end = horizon * DT
    if kind == "straight":
        s = speed * t
    elif kind == "hard_stop":
        a = 3.0 if speed > 3.0 else speed
        s = np.where(t < speed / a, speed * t - 0.5 * a * t * t, speed * speed / (2 * a))
    elif kind == "slow":
        s = 0.5 * speed * t
    elif kind == "accelerate":
        a = 0.3 * speed / t_end * 2
        s = speed * t + 0.5 * a * t * t
    elif kind in ("left", "right"):
        s = 0.8 * speed * t
        side = 1.0 if kind == "left" else -1.0
        phi = s / radius
        on_arc = phi < math.pi / 2
        # past the quarter turn the path continues straight in the new direction
        x = np.where(on_arc, radius * np.sin(np.minimum(phi, math.pi / 2)), radius)
        y = np.where(on_arc, radius * (1 - np.cos(np.minimum(phi, math.pi / 2))),
                     radius + s - radius * math.pi / 2)
        return np.stack([x, side * y], axis=-1)
    elif kind.startswith("speed"):
        factor = float(kind[5:])
        s = factor * speed * t
    else:
        raise ConfigurationError(f"unknown anchor kind {kind!r}")
    return np.stack([s, np.zeros_like(s)], axis=-1)


def anchor_kinds(k: int) -> list[str]:
    kinds = list(ANCHOR_KINDS[:k])
    extra = k - len(kinds)
    for n in range(extra):
        kinds.append(f"speed{0.25 + 0.35 * (n + 1):.2f}")
    return kinds


@dataclass(frozen=True)
class AnchorSet:
    """Agent-frame templates, ``templates[agent_type]`` is (K, horizon, 2)."""

    k: int
    horizon: int
    kinds: tuple[str, ...]
    templates: dict

    def for_type(self, agent_type: str) -> np.ndarray:
        return self.templates[agent_type]


def build_anchors(k: int = 6, horizon: int = FUTURE_STEPS, kinematics: dict | None = None) -> AnchorSet:
    if k < 2:
        raise ConfigurationError(f"need at least 2 anchors, got K={k}")
    kin = dict(ANCHOR_KINEMATICS)
    kin.update(kinematics or {})
    kinds = anchor_kinds(k)
    templates = {}
    for agent_type in AGENT_TYPES:
        speed, radius = kin[agent_type]
        arr = np.stack([_anchor(kind, speed, radius, horizon) for kind in kinds])
        arr.flags.writeable = False
        templates[agent_type] = arr
    return AnchorSet(k, horizon, tuple(kinds), templates)


def init_backbone_params(params: ad.ParamStore, k: int, rng: np.random.Generator,
                         horizon: int = FUTURE_STEPS) -> None:
    """Output layers start at zero: candidates equal anchors, logits uniform."""
    params.add_dense(OFFSET_LAYERS[0], FEATURE_DIM, HIDDEN, rng)
    params.add_dense(OFFSET_LAYERS[1], HIDDEN, k * horizon * 2, rng, zero=True)
    params.add_dense(LOGIT_LAYERS[0], FEATURE_DIM, HIDDEN, rng)
    params.add_dense(LOGIT_LAYERS[1], HIDDEN, k, rng, zero=True)


@dataclass
class CandidateSet:
    """Per-scene candidates.

    ``trajectories``: world-frame Var (A, K, T, 2). ``logits``: Var (A, K) of
    normalized log-probabilities (``exp`` rows sum to one).
    """

    trajectories: ad.Var
    logits: ad.Var
    poses: list
    dims: list
    agent_types: list

    @property
    def k(self) -> int:
        return self.logits.value.shape[1]

    @property
    def num_agents(self) -> int:
        return self.logits.value.shape[0]

    @property
    def traj(self) -> np.ndarray:
        return self.trajectories.value

    @property
    def mu(self) -> np.ndarray:
        return self.logits.value

    def probs(self) -> np.ndarray:
        return np.exp(self.logits.value)

    def top_index(self) -> np.ndarray:
        """Most likely candidate per agent; ties go to the lowest index."""
        return np.argmax(self.logits.value, axis=1)


def predict_candidates(scene: Scene, anchors: AnchorSet, params: ad.ParamStore,
                       tape: ad.Tape) -> CandidateSet:
    feats = np.stack([extract_features(a) for a in scene.agents])
    if feats.shape[1] != params[f"{OFFSET_LAYERS[0]}.W"].shape[0]:
        raise ad.DimensionError(
            f"feature length {feats.shape[1]} does not match backbone input "
            f"{params[f'{OFFSET_LAYERS[0]}.W'].shape[0]}")
    n_agents, k, horizon = scene.num_agents, anchors.k, anchors.horizon
    if params[f"{LOGIT_LAYERS[1]}.W"].shape[1] != k:
        raise ad.DimensionError(f"logit head has {params[f'{LOGIT_LAYERS[1]}.W'].shape[1]} outputs, anchors K={k}")
    x = tape.constant(feats)
    # the head emits per-step increments; a running sum turns them into offsets
    steps = ad.mlp_forward(x, OFFSET_LAYERS, params, tape) * OFFSET_SCALE
    steps = steps.reshape(n_agents * k * 2, horizon)
    cumulative = np.triu(np.ones((horizon, horizon)))
    offsets = ad.transpose((steps @ cumulative).reshape(n_agents, k, 2, horizon), (0, 1, 3, 2))
    base = np.stack([anchors.for_type(a.agent_type) for a in scene.agents])
    local = offsets + base
    poses = [a.current_pose for a in scene.agents]
    world_rows = []
    for i, pose in enumerate(poses):
        c, s = math.cos(pose.yaw), math.sin(pose.yaw)
        rot = np.array([[c, s], [-s, c]])  # row-vector form of R(yaw)
        rows = local[i].reshape(k * horizon, 2)
        world_rows.append(ad.affine_rows(rows, rot, np.array([pose.x, pose.y])))
    world = ad.concat(world_rows, axis=0).reshape(n_agents, k, horizon, 2)
    logits = ad.log_softmax(ad.mlp_forward(x, LOGIT_LAYERS, params, tape))
    return CandidateSet(world, logits, poses, [(a.length, a.width) for a in scene.agents],
                        [a.agent_type for a in scene.agents])
