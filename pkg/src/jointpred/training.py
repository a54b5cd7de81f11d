"""Labels, the stop-gradient structured loss, gradient checks and the training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .backbone import CandidateSet
from .graph import InteractionGraph, canonical_graph_type
from .inference import Beliefs, brute_force_joint, sum_product
from .pipeline import JointPredictor, ModelConfig
from .scene import ConfigurationError, Scene

log = logging.getLogger(__name__)

HUBER_DELTA = 1.0


class TrainingError(RuntimeError):
    pass


def assign_labels(trajectories, gt, valid) -> np.ndarray:
    """Index of the candidate closest to ground truth (mean displacement over valid steps).

    ``trajectories`` is (A, K, T, 2), ``gt`` (A, T, 2), ``valid`` (A, T).
    Agents without valid steps get -1. Ties go to the lowest index.
    """
    traj = np.asarray(trajectories, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    dist = np.linalg.norm(traj - gt[:, None], axis=-1)  # (A, K, T)
    counts = valid.sum(axis=1)
    ade = (dist * valid[:, None, :]).sum(axis=-1) / np.maximum(counts, 1)[:, None]
    labels = np.argmin(ade, axis=1)
    return np.where(counts > 0, labels, -1)


def scene_labels(scene: Scene, candidates: CandidateSet) -> np.ndarray:
    gt = np.stack([a.future_xy for a in scene.agents])
    valid = np.stack([a.valid for a in scene.agents])
    return assign_labels(candidates.traj, gt, valid)


@dataclass
class LossBreakdown:
    reg: ad.Var
    unary_ce: ad.Var
    pair_ce: ad.Var
    total: ad.Var

    def values(self) -> dict:
        return {name: float(getattr(self, name).value) for name in ("reg", "unary_ce", "pair_ce", "total")}


def structured_losses(candidates: CandidateSet, pair_tables: dict, beliefs: Beliefs,
                      labels, graph: InteractionGraph, scene: Scene | None = None, *,
                      stop_gradient: bool = True, huber_delta: float = HUBER_DELTA) -> LossBreakdown:
    """``reg + unary_ce + pair_ce`` recorded on the candidates' tape.

    ``pair_tables`` maps edges to Vars (learned) or arrays (heuristic: these
    contribute no pair term since nothing upstream is trainable). With
    ``stop_gradient=False`` the belief correction ``mu_hat - mu`` stays on the
    tape, cancelling the gradient w.r.t. the logits; it exists as a negative
    control for the gradient checks. ``scene`` supplies ground truth for the
    regression term; without it ``reg`` is zero.
    """
    tape = candidates.logits.tape
    mu = candidates.logits
    labels = np.asarray(labels)
    if beliefs.node.shape != mu.value.shape:
        raise ad.ContractError(f"belief shape {beliefs.node.shape} != logits {mu.value.shape}")
    zero = tape.constant(0.0)

    def corrected(logits, target):
        # forward value is the belief; backward sees only the raw logits
        diff = ad.sub(target, logits)
        if stop_gradient:
            diff = ad.stop_gradient(diff)
        return logits + diff

    unary_terms = []
    for i in range(mu.value.shape[0]):
        if labels[i] < 0:
            continue
        unary_terms.append(ad.softmax_cross_entropy(corrected(mu[i], beliefs.node[i]), int(labels[i])))
    unary_ce = _sum(unary_terms, zero)

    pair_terms = []
    for edge in graph.edges:
        i, j = edge
        if labels[i] < 0 or labels[j] < 0:
            continue
        table = pair_tables[edge]
        table = getattr(table, "logits", table)
        if not isinstance(table, ad.Var):
            continue
        k = table.value.shape[0]
        if beliefs.pair[edge].shape != table.value.shape:
            raise ad.ContractError(f"pair belief for {edge} does not match its table")
        flat = table.reshape(k * k)
        label = int(labels[i]) * k + int(labels[j])
        pair_terms.append(ad.softmax_cross_entropy(corrected(flat, beliefs.pair[edge].reshape(-1)), label))
    pair_ce = _sum(pair_terms, zero)

    reg_terms = []
    if scene is not None:
        traj = candidates.trajectories
        for i, agent in enumerate(scene.agents):
            if labels[i] < 0:
                continue
            steps = np.flatnonzero(agent.valid)
            pred = traj[(i, int(labels[i]), steps)]
            reg_terms.append(ad.huber(pred, agent.future_xy[steps], huber_delta))
    reg = _sum(reg_terms, zero)
    total = reg + unary_ce + pair_ce
    return LossBreakdown(reg, unary_ce, pair_ce, total)


def _sum(terms, zero):
    out = zero
    for t in terms:
        out = out + t
    return out


# -- gradient equivalence ---------------------------------------------------

@dataclass
class EquivalenceResult:
    max_abs_deviation: float
    max_rel_error: float
    analytic: dict
    numeric: dict


def exact_nll(graph, mu, tables, labels) -> float:
    """``-log p(s*)`` under the full joint."""
    joint = brute_force_joint(graph, mu, tables)
    return -joint.log_prob(tuple(int(l) for l in labels))


def gradient_equivalence(graph: InteractionGraph, mu, tables: dict, labels, *,
                         eps: float = 1e-6, stop_gradient: bool = True,
                         iterations: int | None = None, floor: float = 1e-6) -> EquivalenceResult:
    """Reverse-mode gradient of the CE losses vs finite differences of the exact NLL.

    Works directly on free unary logits ``mu`` (A, K) and pair tables. Message
    passing runs for ``iterations`` (default: enough to be exact on a tree).
    """
    mu = np.asarray(mu, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    if not graph.is_acyclic():
        raise ad.ContractError("gradient equivalence is only exact on acyclic graphs")
    iterations = iterations or max(1, graph.diameter())
    params = ad.ParamStore({"mu": mu})
    for i, j in graph.edges:
        params.add(f"pair.{i}.{j}", tables[(i, j)])

    def table_arrays(p):
        return {(i, j): p[f"pair.{i}.{j}"] for i, j in graph.edges}

    tape = ad.Tape()
    mu_var = tape.param(params, "mu")
    table_vars = {(i, j): tape.param(params, f"pair.{i}.{j}") for i, j in graph.edges}
    beliefs = sum_product(graph, mu, table_arrays(params), iterations)
    cands = _LogitsOnly(mu_var)
    losses = structured_losses(cands, table_vars, beliefs, labels, graph, stop_gradient=stop_gradient)
    ce = losses.unary_ce + losses.pair_ce
    analytic = ad.backward_gradients(tape, ce, params)

    numeric = {}
    work = params.copy()
    for name in params.names():
        base = params[name]
        g = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            arr = base.copy()
            arr[idx] += eps
            work[name] = arr
            up = exact_nll(graph, work["mu"], table_arrays(work), labels)
            arr[idx] = base[idx] - eps
            work[name] = arr
            down = exact_nll(graph, work["mu"], table_arrays(work), labels)
            work[name] = base
            g[idx] = (up - down) / (2 * eps)
        numeric[name] = g
    dev = max(float(np.max(np.abs(analytic[n] - numeric[n]))) for n in params.names())
    rel = max(float(np.max(ad.relative_error(analytic[n], numeric[n], floor))) for n in params.names())
    return EquivalenceResult(dev, rel, analytic, numeric)


@dataclass
class _LogitsOnly:
    logits: ad.Var


def gradient_equivalence_check(scene: Scene, model: JointPredictor, *, graph: str = "dynamic",
                               eps: float = 1e-6, stop_gradient: bool = True, seed: int = 0) -> EquivalenceResult:
    """Run the model on ``scene`` and check the loss gradients w.r.t. its logits and tables.

    Labels come from nearest-candidate assignment against ground truth.
    """
    fp = model.forward(scene, graph=graph, potential="learned", seed=seed, infer=False)
    if not fp.graph.is_acyclic():
        raise ad.ContractError("scene graph has a cycle")
    labels = scene_labels(scene, fp.candidates)
    if (labels < 0).any():
        raise ad.ContractError("every agent needs a label")
    brute_force_joint(fp.graph, fp.candidates.mu, fp.table_values())  # feasibility
    return gradient_equivalence(fp.graph, fp.candidates.mu, fp.table_values(), labels,
                                eps=eps, stop_gradient=stop_gradient)


# -- training ---------------------------------------------------------------

@dataclass
class TrainConfig:
    seed: int = 0
    k: int = 6
    graph: str = "dynamic"
    potential: str = "learned"
    lr: float = 1e-3
    steps: int = 2000
    weight_decay: float = 0.0
    iterations: int = 3
    huber_delta: float = HUBER_DELTA
    lr_decay_step: int = 0
    scenario_mix: str = "intersection,merge,queue"

    def __post_init__(self):
        self.graph = canonical_graph_type(self.graph)
        if self.steps < 0:
            raise ConfigurationError("steps must be non-negative")
        if self.lr < 0:
            raise ConfigurationError("lr must be non-negative")
        ModelConfig(self.k, self.graph, self.potential, self.iterations)

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.k, self.graph, self.potential, self.iterations)

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            name = key.replace("-", "_")
            if name not in known:
                raise ConfigurationError(f"unknown config key {key!r}")
            kwargs[name] = _coerce(known[name].type, raw, key)
        return cls(**kwargs)

    def as_dict(self) -> dict:
        return asdict(self)


def _coerce(type_name, raw, key):
    if not isinstance(raw, str):
        return raw
    try:
        if type_name in ("int", int):
            return int(raw)
        if type_name in ("float", float):
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"config key {key!r}: cannot parse {raw!r}") from None
    return raw


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
    return values


@dataclass
class TrainResult:
    model: JointPredictor
    log: list = field(default_factory=list)

    def write_log(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("step,scene_id,reg,unary_ce,pair_ce,total\n")
            for row in self.log:
                fh.write(f"{row['step']},{row['scene_id']},{row['reg']!r},{row['unary_ce']!r},"
                         f"{row['pair_ce']!r},{row['total']!r}\n")


def train_step(model: JointPredictor, scene: Scene, *, seed: int = 0,
               huber_delta: float = HUBER_DELTA) -> tuple[LossBreakdown, dict]:
    """Forward, structured loss and gradients for one scene."""
    tape = ad.Tape()
    fp = model.forward(scene, tape, seed=seed)
    labels = scene_labels(scene, fp.candidates)
    losses = structured_losses(fp.candidates, fp.tables, fp.beliefs, labels, fp.graph, scene,
                               huber_delta=huber_delta)
    grads = ad.backward_gradients(tape, losses.total, model.params)
    return losses, grads


def train(dataset: list, config: TrainConfig | None = None,
          model: JointPredictor | None = None) -> TrainResult:
    """AdamW over scenes in seeded epoch order, one scene per step."""
    cfg = config or TrainConfig()
    if not dataset:
        raise ConfigurationError("training needs at least one scene")
    model = model or JointPredictor(cfg.model_config(), seed=cfg.seed)
    hyper = ad.AdamWConfig(lr=cfg.lr, weight_decay=cfg.weight_decay)
    state = ad.AdamWState()
    rng = np.random.default_rng([cfg.seed, 2])
    order: list[int] = []
    result = TrainResult(model)
    for step in range(cfg.steps):
        if not order:
            order = list(rng.permutation(len(dataset)))
        idx = order.pop(0)
        scene = dataset[idx]
        if cfg.lr_decay_step and step == cfg.lr_decay_step:
            hyper.lr *= 0.5
        losses, grads = train_step(model, scene, seed=cfg.seed * 7919 + int(idx),
                                   huber_delta=cfg.huber_delta)
        values = losses.values()
        if not all(math.isfinite(v) for v in values.values()):
            raise TrainingError(f"non-finite loss at step {step} on scene {scene.scene_id}")
        ad.adamw_step(model.params, grads, hyper, state)
        result.log.append({"step": step, "scene_id": scene.scene_id, **values})
        if step % 200 == 0:
            log.info("step %d total %.4f (reg %.4f unary %.4f pair %.4f)", step, values["total"],
                     values["reg"], values["unary_ce"], values["pair_ce"])
    return result


# -- full-model gradient check ----------------------------------------------

def jittered_params(k: int, seed: int, scale: float = 0.01) -> ad.ParamStore:
    """Fresh parameters with the all-zero arrays (output layers, biases) perturbed.

    At initialization those zeros block the gradient to everything upstream,
    which would make a gradient check vacuous for most weights.
    """
    from .pipeline import init_params
    params = init_params(k, seed)
    rng = np.random.default_rng([seed, 3])
    for name in params.names():
        if not params[name].any():
            params[name] = rng.normal(0.0, scale, size=params[name].shape)
    return params


def full_model_gradient_check(scene: Scene, model: JointPredictor, *, graph: str = "av_star",
                              eps: float = 1e-5, max_entries: int | None = 12, seed: int = 0,
                              huber_delta: float = HUBER_DELTA, skip_kinks: bool = True) -> ad.GradCheckResult:
    """Structured-loss gradient w.r.t. every parameter vs finite differences of ``reg - log p(s*)``.

    The tape loss is the stop-gradient surrogate; the finite-differenced value
    is the regression term plus the exact joint NLL from enumeration. They
    agree only when message passing is exact, so the graph must be a tree and
    the iteration count is raised to its diameter. Labels are fixed at the
    starting point. ``max_entries`` samples coordinates per parameter array;
    coordinates whose perturbation crosses a relu/huber kink are skipped.
    The relative-error floor is ``1e-6 * max(1, |loss|)``: differences of a
    loss of size L cannot resolve gradient entries much below ``L * 1e-16 / eps``.
    """
    probe = model.forward(scene, graph=graph, potential="learned", seed=seed, infer=False)
    g = probe.graph
    if not g.is_acyclic():
        raise ad.ContractError("full-model check needs an acyclic graph")
    labels = scene_labels(scene, probe.candidates)
    if (labels < 0).any():
        raise ad.ContractError("every agent needs a label")
    brute_force_joint(g, probe.candidates.mu, probe.table_values())  # feasibility
    config = ModelConfig(model.config.k, g.graph_type, "learned",
                         max(model.config.iterations, g.diameter(), 1))

    def run(p: ad.ParamStore, tape: ad.Tape):
        m = JointPredictor(config, params=p, anchors=model.anchors)
        fp = m.forward(scene, tape, graph=graph, seed=seed)
        if fp.graph.edges != g.edges:
            raise ad.ContractError("graph changed during the check")
        return fp

    def loss_fn(p, tape):
        fp = run(p, tape)
        return structured_losses(fp.candidates, fp.tables, fp.beliefs, labels, fp.graph, scene,
                                 huber_delta=huber_delta).total

    def value_fn(p):
        fp = run(p, ad.Tape())
        reg = structured_losses(fp.candidates, fp.tables, fp.beliefs, labels, fp.graph, scene,
                                huber_delta=huber_delta).reg.value
        return float(reg) + exact_nll(fp.graph, fp.candidates.mu, fp.table_values(), labels)

    floor = 1e-6 * max(1.0, abs(value_fn(model.params)))
    return ad.finite_diff_check(loss_fn, model.params, eps, value_fn=value_fn, floor=floor,
                                max_entries=max_entries, seed=seed, skip_kinks=skip_kinks)
