"""Scenes, agent-centric frames, synthetic scenario generation and JSONL I/O."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

HISTORY_STEPS = 11
FUTURE_STEPS = 80
DT = 0.1
MAX_AGENTS = 40
AGENT_TYPES = ("vehicle", "pedestrian", "cyclist")
SCENE_KINDS = ("intersection", "merge", "queue", "random_mix")


class ConfigurationError(ValueError):
    pass


class SceneParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field = field


def normalize_angle(yaw):
    """Wrap into (-pi, pi]."""
    out = np.mod(np.asarray(yaw, dtype=np.float64) + np.pi, 2 * np.pi) - np.pi
    out = np.where(out == -np.pi, np.pi, out)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))


def _rotation(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s], [s, c]])


def to_agent_frame(points, anchor: Pose2) -> np.ndarray:
    """Express world points in the frame centred on ``anchor`` with zero yaw.

    Works on any array whose last axis is (x, y).
    """
    pts = np.asarray(points, dtype=np.float64)
    # row-vector form: (p - t) @ R(yaw) == R(-yaw) (p - t)
    return (pts - np.array([anchor.x, anchor.y])) @ _rotation(anchor.yaw)


def from_agent_frame(points, anchor: Pose2) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    return pts @ _rotation(anchor.yaw).T + np.array([anchor.x, anchor.y])


def _frozen(arr, dtype=np.float64) -> np.ndarray:
    out = np.array(arr, dtype=dtype)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class AgentTrack:
    """One agent.

    ``history`` is (11, 4): x, y, yaw, speed at t = -1.0 .. 0.0 s.
    ``future`` is (80, 3): x, y, yaw at t = 0.1 .. 8.0 s.
    """

    id: int
    agent_type: str
    length: float
    width: float
    is_av: bool
    history: np.ndarray
    future: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        if self.agent_type not in AGENT_TYPES:
            raise ConfigurationError(f"unknown agent type {self.agent_type!r}")
        if not (self.length > 0 and self.width > 0):
            raise ConfigurationError("agent dimensions must be positive")
        if self.agent_type == "vehicle" and self.length < self.width:
            raise ConfigurationError("vehicle length must be >= width")
        hist = np.array(self.history, dtype=np.float64)
        fut = np.array(self.future, dtype=np.float64)
        if hist.shape != (HISTORY_STEPS, 4):
            raise ConfigurationError(f"history must be ({HISTORY_STEPS}, 4), got {hist.shape}")
        if fut.shape != (FUTURE_STEPS, 3):
            raise ConfigurationError(f"future must be ({FUTURE_STEPS}, 3), got {fut.shape}")
        hist[:, 2] = normalize_angle(hist[:, 2])
        fut[:, 2] = normalize_angle(fut[:, 2])
        valid = np.array(self.valid, dtype=bool)
        if valid.shape != (FUTURE_STEPS,):
            raise ConfigurationError("valid mask must have one entry per future step")
        object.__setattr__(self, "id", int(self.id))
        object.__setattr__(self, "length", float(self.length))
        object.__setattr__(self, "width", float(self.width))
        object.__setattr__(self, "is_av", bool(self.is_av))
        object.__setattr__(self, "history", _frozen(hist))
        object.__setattr__(self, "future", _frozen(fut))
        object.__setattr__(self, "valid", _frozen(valid, bool))

    @property
    def current_pose(self) -> Pose2:
        x, y, yaw, _ = self.history[-1]
        return Pose2(x, y, yaw)

    @property
    def future_xy(self) -> np.ndarray:
        return self.future[:, :2]

    def __eq__(self, other) -> bool:
        if not isinstance(other, AgentTrack):
            return NotImplemented
        return (self.id == other.id and self.agent_type == other.agent_type
                and self.length == other.length and self.width == other.width
                and self.is_av == other.is_av
                and np.array_equal(self.history, other.history)
                and np.array_equal(self.future, other.future)
                and np.array_equal(self.valid, other.valid))


@dataclass(frozen=True)
class Scene:
    scene_id: str
    agents: tuple[AgentTrack, ...]
    dt: float = DT
    rng_seed: int = 0

    def __post_init__(self):
        agents = tuple(self.agents)
        object.__setattr__(self, "agents", agents)
        if not 1 <= len(agents) <= MAX_AGENTS:
            raise ConfigurationError(f"scene must have 1..{MAX_AGENTS} agents, got {len(agents)}")
        if sum(a.is_av for a in agents) != 1:
            raise ConfigurationError("scene must have exactly one AV")
        if len({a.id for a in agents}) != len(agents):
            raise ConfigurationError("agent ids must be unique")

    @property
    def num_agents(self) -> int:
        return len(self.agents)

    @property
    def av_index(self) -> int:
        return next(i for i, a in enumerate(self.agents) if a.is_av)

    def transformed(self, rotation: float, translation=(0.0, 0.0)) -> "Scene":
        """Apply one global rigid transform to every pose in the scene."""
        rot = _rotation(rotation)
        t = np.asarray(translation, dtype=np.float64)
        agents = []
        for a in self.agents:
            hist = a.history.copy()
            hist[:, :2] = hist[:, :2] @ rot.T + t
            hist[:, 2] += rotation
            fut = a.future.copy()
            fut[:, :2] = fut[:, :2] @ rot.T + t
            fut[:, 2] += rotation
            agents.append(AgentTrack(a.id, a.agent_type, a.length, a.width, a.is_av,
                                     hist, fut, a.valid))
        return Scene(self.scene_id, tuple(agents), self.dt, self.rng_seed)


# -- synthetic scenarios ----------------------------------------------------

@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs for :func:`generate_scene`.

    ``agents`` only applies to ``random_mix``; the interactive kinds add
    ``background_agents`` non-interacting vehicles on far-away lanes.
    """

    agents: int = 8
    background_agents: int = 0
    speed_range: tuple[float, float] = (8.0, 12.0)
    arrival_time: float = 3.0
    arrival_jitter: float = 0.2
    stop_margin: float = 2.0
    queue_headway: float = 1.5
    queue_decel: float = 3.0
    merge_angle: float = 0.35
    random_frame: bool = True

    def validate(self) -> None:
        if not 1 <= self.agents <= MAX_AGENTS:
            raise ConfigurationError(f"agents must be in 1..{MAX_AGENTS}, got {self.agents}")
        if self.background_agents < 0 or self.background_agents + 2 > MAX_AGENTS:
            raise ConfigurationError("background_agents out of range")
        lo, hi = self.speed_range
        if not 0 < lo <= hi:
            raise ConfigurationError("speed_range must satisfy 0 < lo <= hi")
        if self.arrival_time <= 0 or self.arrival_jitter < 0:
            raise ConfigurationError("arrival timing must be positive")


class _Path:
    """Polyline path parameterised by arclength; extended straight at both ends.

    Arclength ``s`` is measured from ``points[0]`` shifted by ``s_origin``.
    """

    def __init__(self, points, s_origin: float = 0.0):
        self.points = np.asarray(points, dtype=np.float64)
        self.s_origin = float(s_origin)
        seg = np.diff(self.points, axis=0)
        self.seg_len = np.hypot(seg[:, 0], seg[:, 1])
        self.cum = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.dirs = seg / self.seg_len[:, None]

    def sample(self, s):
        s = np.asarray(s, dtype=np.float64) + self.s_origin
        k = np.clip(np.searchsorted(self.cum, s, side="right") - 1, 0, len(self.seg_len) - 1)
        local = s - self.cum[k]
        xy = self.points[k] + local[..., None] * self.dirs[k]
        yaw = np.arctan2(self.dirs[k, 1], self.dirs[k, 0])
        return xy, yaw


def _arc_points(start, yaw, radius, angle, n=24):
    """Points along a constant-curvature turn (angle > 0 turns left)."""
    side = np.sign(angle)
    center = np.asarray(start) + radius * side * np.array([-math.sin(yaw), math.cos(yaw)])
    phis = np.linspace(0.0, abs(angle), n + 1)[1:]
    theta0 = yaw - side * math.pi / 2
    return np.stack([center + radius * np.array([math.cos(theta0 + side * p), math.sin(theta0 + side * p)])
                     for p in phis])


def _straight_path(origin, yaw, length=400.0):
    d = np.array([math.cos(yaw), math.sin(yaw)])
    o = np.asarray(origin, dtype=np.float64)
    return _Path([o - length * d, o + length * d], s_origin=length)


def _profile_constant(v):
    def s(t):
        return v * t
    return s


def _profile_stop(v, stop_dist):
    """Decelerate uniformly from t=0 to rest after ``stop_dist`` meters."""
    a = v * v / (2.0 * stop_dist)
    t_stop = v / a

    def s(t):
        t = np.asarray(t, dtype=np.float64)
        moving = np.where(t <= 0, v * t, v * t - 0.5 * a * t * t)
        return np.where(t >= t_stop, stop_dist, moving)
    return s


def _profile_slowdown(v, v_end, duration):
    a = (v - v_end) / duration

    def s(t):
        t = np.asarray(t, dtype=np.float64)
        early = np.where(t <= 0, v * t, v * t - 0.5 * a * t * t)
        s_end = v * duration - 0.5 * a * duration ** 2
        return np.where(t >= duration, s_end + v_end * (t - duration), early)
    return s


def _speed_of(profile, t, h=1e-4):
    return (profile(t + h) - profile(t - h)) / (2 * h)


def _make_track(agent_id, agent_type, dims, is_av, path: _Path, s0, profile) -> AgentTrack:
    t_hist = np.arange(-(HISTORY_STEPS - 1), 1) * DT
    t_fut = np.arange(1, FUTURE_STEPS + 1) * DT
    hxy, hyaw = path.sample(s0 + profile(t_hist))
    speed = np.maximum(_speed_of(profile, t_hist), 0.0)
    fxy, fyaw = path.sample(s0 + profile(t_fut))
    history = np.column_stack([hxy, hyaw, speed])
    future = np.column_stack([fxy, fyaw])
    length, width = dims
    return AgentTrack(agent_id, agent_type, length, width, is_av, history, future,
                      np.ones(FUTURE_STEPS, dtype=bool))


def _vehicle_dims(rng):
    return float(rng.uniform(4.2, 5.0)), float(rng.uniform(1.8, 2.1))


_TYPE_DIMS = {"pedestrian": (0.6, 0.6), "cyclist": (1.8, 0.7)}
_TYPE_SPEEDS = {"vehicle": None, "pedestrian": (1.0, 1.8), "cyclist": (3.0, 6.0)}


def _background(rng, cfg: GeneratorConfig, start_id: int, count: int, offset: float) -> list[AgentTrack]:
    """Vehicles on parallel lanes far from the interaction (offset metres away)."""
    out = []
    for k in range(count):
        v = float(rng.uniform(*cfg.speed_range))
        lane_y = offset + 6.0 * k
        path = _straight_path((0.0, lane_y), 0.0 if k % 2 == 0 else math.pi)
        out.append(_make_track(start_id + k, "vehicle", _vehicle_dims(rng), False, path,
                               float(rng.uniform(-20, 20)), _profile_constant(v)))
    return out


def _intersection(rng, cfg):
    # Agent 0 drives north on x = +1.75, agent 1 east on y = -1.75; they conflict at
    # (1.75, -1.75). Both are timed to arrive together; a coin decides who yields.
    conflict = np.array([1.75, -1.75])
    v = rng.uniform(*cfg.speed_range, size=2)
    dims = [_vehicle_dims(rng), _vehicle_dims(rng)]
    t_arr = cfg.arrival_time + rng.uniform(-cfg.arrival_jitter, cfg.arrival_jitter, size=2)
    dist = v * t_arr
    yielder = int(rng.integers(2))
    yaws = [math.pi / 2, 0.0]
    tracks = []
    for k in range(2):
        path = _straight_path(conflict, yaws[k])
        s0 = -dist[k]
        if k == yielder:
            other_w = dims[1 - k][1]
            stop = dist[k] - (dims[k][0] / 2 + other_w / 2 + cfg.stop_margin)
            profile = _profile_stop(v[k], stop)
        else:
            profile = _profile_constant(v[k])
        tracks.append(_make_track(k, "vehicle", dims[k], k == 0, path, s0, profile))
    tracks += _background(rng, cfg, 2, cfg.background_agents, 60.0)
    return tracks


def _merge(rng, cfg):
    # Agent 0 on the main lane (y = 0, heading east); agent 1 on a ramp joining at
    # the origin. Both arrive together; the yielder slows down to fall in behind.
    v = float(rng.uniform(*cfg.speed_range))
    v = np.array([v, v + rng.uniform(-0.5, 0.5)])
    dims = [_vehicle_dims(rng), _vehicle_dims(rng)]
    t_arr = cfg.arrival_time + rng.uniform(-cfg.arrival_jitter, cfg.arrival_jitter, size=2)
    dist = v * t_arr
    yielder = int(rng.integers(2))
    ang = cfg.merge_angle
    ramp_dir = np.array([math.cos(ang), math.sin(ang)])
    paths = [
        _Path([(-400.0, 0.0), (400.0, 0.0)]),
        _Path([-400.0 * ramp_dir, (0.0, 0.0), (400.0, 0.0)]),
    ]
    s_merge = [400.0, 400.0]
    tracks = []
    for k in range(2):
        s0 = s_merge[k] - dist[k]
        if k == yielder:
            profile = _profile_slowdown(v[k], 0.25 * v[k], 2.5)
        else:
            profile = _profile_constant(v[k])
        tracks.append(_make_track(k, "vehicle", dims[k], k == 0, paths[k], s0, profile))
    tracks += _background(rng, cfg, 2, cfg.background_agents, 40.0)
    return tracks


def _queue(rng, cfg):
    # Leader ahead, follower at a fixed time headway; if the leader brakes to a
    # stop the follower stops behind it.
    v = float(rng.uniform(*cfg.speed_range))
    dims = [_vehicle_dims(rng), _vehicle_dims(rng)]
    gap = v * cfg.queue_headway
    leader_stops = bool(rng.integers(2))
    path = _straight_path((0.0, 0.0), 0.0)
    leader_stop = v * v / (2 * cfg.queue_decel)
    if leader_stops:
        lead_profile = _profile_stop(v, leader_stop)
        follow_stop = gap + leader_stop - (dims[0][0] / 2 + dims[1][0] / 2 + cfg.stop_margin)
        follow_profile = _profile_stop(v, follow_stop)
    else:
        lead_profile = follow_profile = _profile_constant(v)
    # follower is the AV: the one whose plan depends on the other
    tracks = [
        _make_track(0, "vehicle", dims[1], True, path, -gap, follow_profile),
        _make_track(1, "vehicle", dims[0], False, path, 0.0, lead_profile),
    ]
    tracks += _background(rng, cfg, 2, cfg.background_agents, 30.0)
    return tracks


def _random_mix(rng, cfg):
    # One agent per lane, lanes 6 m apart and alternating direction; behaviours
    # are independent so futures never interact.
    tracks = []
    av = int(rng.integers(cfg.agents))
    for k in range(cfg.agents):
        agent_type = "vehicle" if k == av else str(rng.choice(AGENT_TYPES, p=[0.7, 0.15, 0.15]))
        if agent_type == "vehicle":
            dims = _vehicle_dims(rng)
            v = float(rng.uniform(*cfg.speed_range))
        else:
            dims = _TYPE_DIMS[agent_type]
            v = float(rng.uniform(*_TYPE_SPEEDS[agent_type]))
        heading = 0.0 if k % 2 == 0 else math.pi
        path = _straight_path((0.0, 6.0 * k), heading)
        behaviour = rng.integers(3)
        if behaviour == 0:
            profile = _profile_constant(v)
        elif behaviour == 1:
            profile = _profile_stop(v, float(rng.uniform(0.6, 1.0)) * v * v / 4.0 + 1.0)
        else:
            profile = _profile_slowdown(v, 0.5 * v, 2.0)
        tracks.append(_make_track(k, agent_type, dims, k == av, path,
                                  float(rng.uniform(-30, 30)), profile))
    return tracks


_BUILDERS = {"intersection": _intersection, "merge": _merge, "queue": _queue,
             "random_mix": _random_mix}


def generate_scene(kind: str, seed: int, params: GeneratorConfig | None = None) -> Scene:
    """Build one synthetic scene; identical ``(kind, seed, params)`` give identical scenes."""
    cfg = params or GeneratorConfig()
    if kind not in _BUILDERS:
        raise ConfigurationError(f"unknown scene kind {kind!r}; expected one of {SCENE_KINDS}")
    cfg.validate()
    rng = np.random.default_rng([seed, SCENE_KINDS.index(kind)])
    tracks = _BUILDERS[kind](rng, cfg)
    scene = Scene(f"{kind}-{seed}", tuple(tracks), DT, seed)
    if cfg.random_frame:
        scene = scene.transformed(float(rng.uniform(-math.pi, math.pi)),
                                  rng.uniform(-50.0, 50.0, size=2))
    return scene


def generate_dataset(kinds: Sequence[str], count: int, seed: int,
                     params: GeneratorConfig | None = None) -> list[Scene]:
    """``count`` scenes cycling through ``kinds`` with per-scene seeds drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2 ** 31 - 1, size=count)
    return [generate_scene(kinds[n % len(kinds)], int(seeds[n]), params) for n in range(count)]


# -- serialization ----------------------------------------------------------

def _track_to_dict(a: AgentTrack) -> dict:
    return {
        "id": a.id,
        "agent_type": a.agent_type,
        "length": a.length,
        "width": a.width,
        "is_av": a.is_av,
        "history": a.history.tolist(),
        "future": a.future.tolist(),
        "valid": a.valid.tolist(),
    }


def serialize_scene(scene: Scene) -> str:
    """One JSON object on one line; floats use Python's round-trip repr."""
    record = {
        "scene_id": scene.scene_id,
        "dt": scene.dt,
        "rng_seed": scene.rng_seed,
        "agents": [_track_to_dict(a) for a in scene.agents],
    }
    return json.dumps(record, separators=(",", ":"), allow_nan=False)


def _require(obj: dict, key: str, kind, line, prefix=""):
    if not isinstance(obj, dict) or key not in obj:
        raise SceneParseError("missing", line, prefix + key)
    value = obj[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SceneParseError(f"expected number, got {type(value).__name__}", line, prefix + key)
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SceneParseError(f"expected integer, got {type(value).__name__}", line, prefix + key)
        return value
    if not isinstance(value, kind):
        raise SceneParseError(f"expected {kind.__name__}, got {type(value).__name__}", line, prefix + key)
    return value


def parse_scene(text: str, line: int | None = None) -> Scene:
    try:
        record = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneParseError(f"malformed JSON ({exc.msg} at column {exc.colno})", line) from None
    if not isinstance(record, dict):
        raise SceneParseError("record must be a JSON object", line)
    scene_id = _require(record, "scene_id", str, line)
    dt = _require(record, "dt", float, line)
    seed = _require(record, "rng_seed", int, line)
    raw_agents = _require(record, "agents", list, line)
    agents = []
    for n, raw in enumerate(raw_agents):
        p = f"agents[{n}]."
        try:
            track = AgentTrack(
                _require(raw, "id", int, line, p),
                _require(raw, "agent_type", str, line, p),
                _require(raw, "length", float, line, p),
                _require(raw, "width", float, line, p),
                _require(raw, "is_av", bool, line, p),
                np.array(_require(raw, "history", list, line, p), dtype=np.float64),
                np.array(_require(raw, "future", list, line, p), dtype=np.float64),
                np.array(_require(raw, "valid", list, line, p), dtype=bool),
            )
        except SceneParseError:
            raise
        except (ValueError, TypeError) as exc:
            raise SceneParseError(str(exc), line, f"agents[{n}]") from None
        agents.append(track)
    try:
        return Scene(scene_id, tuple(agents), dt, seed)
    except ConfigurationError as exc:
        raise SceneParseError(str(exc), line, "agents") from None


def write_dataset(path, scenes: Iterable[Scene]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for scene in scenes:
            fh.write(serialize_scene(scene))
            fh.write("\n")
            n += 1
    return n


def read_dataset(path) -> list[Scene]:
    scenes = []
    with open(path, encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            if text.strip():
                scenes.append(parse_scene(text, lineno))
    return scenes
