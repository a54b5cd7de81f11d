"""Minimal reverse-mode differentiation over numpy arrays.

A :class:`Tape` records every primitive applied to :class:`Var` values. Calling
:func:`backward_gradients` walks the record in reverse and accumulates
vector-Jacobian products into a gradient store keyed like the
:class:`ParamStore` the leaves were read from.

Everything is float64. Broadcasting follows numpy for ``add``/``mul`` only.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

CHECKPOINT_FORMAT = "jointpred-params/1"


class DimensionError(ValueError):
    """Operand shapes do not fit together."""


class NumericError(ArithmeticError):
    """A loss or gradient became non-finite."""


class ContractError(ValueError):
    """A caller broke an operation's precondition."""


class ParamStore:
    """Ordered collection of named float64 parameter arrays."""

    def __init__(self, arrays: dict[str, np.ndarray] | None = None):
        self._arrays: OrderedDict[str, np.ndarray] = OrderedDict()
        for name, value in (arrays or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> np.ndarray:
        if name in self._arrays:
            raise KeyError(f"parameter {name!r} already exists")
        arr = np.array(value, dtype=np.float64)
        self._arrays[name] = arr
        return arr

    def add_dense(self, name: str, fan_in: int, fan_out: int, rng: np.random.Generator,
                  zero: bool = False) -> None:
        """Add ``name.W`` (fan_in x fan_out) and ``name.b`` with Glorot-uniform init."""
        if zero:
            w = np.zeros((fan_in, fan_out))
        else:
            a = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-a, a, size=(fan_in, fan_out))
        self.add(f"{name}.W", w)
        self.add(f"{name}.b", np.zeros(fan_out))

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name: str, value) -> None:
        if name not in self._arrays:
            raise KeyError(name)
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self._arrays[name].shape:
            raise DimensionError(
                f"parameter {name!r}: shape {value.shape} != {self._arrays[name].shape}")
        self._arrays[name] = value.copy()

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def names(self) -> list[str]:
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def size(self) -> int:
        return int(sum(v.size for v in self._arrays.values()))

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self._arrays.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self._arrays.items()}

    def equals(self, other: "ParamStore") -> bool:
        return self.names() == other.names() and all(
            np.array_equal(self[k], other[k]) for k in self._arrays)

    def save(self, path) -> None:
        """Write an ``.npz`` checkpoint.

        Layout: one array per parameter under its own name, plus a
        ``__format__`` string entry holding :data:`CHECKPOINT_FORMAT` and a
        ``__order__`` entry listing parameter names in store order.
        """
        payload = dict(self._arrays)
        payload["__format__"] = np.array(CHECKPOINT_FORMAT)
        payload["__order__"] = np.array(self.names())
        with open(path, "wb") as fh:
            np.savez(fh, **payload)

    @classmethod
    def load(cls, path) -> "ParamStore":
        with np.load(path, allow_pickle=False) as data:
            fmt = str(data["__format__"]) if "__format__" in data else None
            if fmt != CHECKPOINT_FORMAT:
                raise ValueError(f"{path}: unsupported checkpoint format {fmt!r}")
            order = [str(n) for n in data["__order__"]]
            return cls({name: data[name] for name in order})


class Var:
    """A value recorded on a tape."""

    __slots__ = ("value", "tape", "parents", "name")
    __array_priority__ = 100

    def __init__(self, value: np.ndarray, tape: "Tape", parents=(), name: str | None = None):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(shape={self.value.shape}, name={self.name!r})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    def sum(self):
        return total(self)


class Tape:
    """Ordered record of primitive operations."""

    def __init__(self):
        self.nodes: list[Var] = []
        self._leaves: dict[str, Var] = {}
        # masks of piecewise ops (relu, huber); a change between two evaluations
        # means a finite difference straddled a kink
        self.branches: list[np.ndarray] = []

    def param(self, store: ParamStore, name: str) -> Var:
        """Leaf for a named parameter; repeated reads share one node."""
        leaf = self._leaves.get(name)
        if leaf is None:
            leaf = Var(store[name], self, (), name=name)
            self._leaves[name] = leaf
            self.nodes.append(leaf)
        return leaf

    def constant(self, value) -> Var:
        var = Var(np.asarray(value, dtype=np.float64), self)
        self.nodes.append(var)
        return var

    def record(self, value: np.ndarray, parents) -> Var:
        var = Var(value, self, tuple(parents))
        self.nodes.append(var)
        return var

    def leaf_names(self) -> list[str]:
        return list(self._leaves)


def _tape_of(*items) -> Tape:
    for item in items:
        if isinstance(item, Var):
            return item.tape
    raise ContractError("operation needs at least one Var operand")


def as_var(x, tape: Tape) -> Var:
    if isinstance(x, Var):
        if x.tape is not tape:
            raise ContractError("operands are recorded on different tapes")
        return x
    return tape.constant(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- primitives -------------------------------------------------------------

def add(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = as_var(a, tape), as_var(b, tape)
    sa, sb = a.value.shape, b.value.shape
    return tape.record(a.value + b.value, [
        (a, lambda g: _unbroadcast(g, sa)),
        (b, lambda g: _unbroadcast(g, sb)),
    ])


def sub(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = as_var(a, tape), as_var(b, tape)
    sa, sb = a.value.shape, b.value.shape
    return tape.record(a.value - b.value, [
        (a, lambda g: _unbroadcast(g, sa)),
        (b, lambda g: -_unbroadcast(g, sb)),
    ])


def mul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = as_var(a, tape), as_var(b, tape)
    av, bv = a.value, b.value
    return tape.record(av * bv, [
        (a, lambda g: _unbroadcast(g * bv, av.shape)),
        (b, lambda g: _unbroadcast(g * av, bv.shape)),
    ])


def matmul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = as_var(a, tape), as_var(b, tape)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise DimensionError(f"matmul: {av.shape} @ {bv.shape}")
    return tape.record(av @ bv, [
        (a, lambda g: g @ bv.T),
        (b, lambda g: av.T @ g),
    ])


def relu(x: Var) -> Var:
    mask = x.value > 0
    x.tape.branches.append(mask)
    return x.tape.record(np.where(mask, x.value, 0.0), [(x, lambda g: g * mask)])


def reshape(x: Var, shape) -> Var:
    old = x.value.shape
    return x.tape.record(x.value.reshape(shape), [(x, lambda g: g.reshape(old))])


def transpose(x: Var, axes) -> Var:
    inverse = np.argsort(axes)
    return x.tape.record(np.transpose(x.value, axes), [(x, lambda g: np.transpose(g, inverse))])


def take(x: Var, index) -> Var:
    """Basic or advanced indexing; gradients scatter-add back."""
    shape = x.value.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return out

    return x.tape.record(np.array(x.value[index]), [(x, vjp)])


def concat(items: Sequence[Var], axis: int = -1) -> Var:
    tape = _tape_of(*items)
    items = [as_var(v, tape) for v in items]
    values = [v.value for v in items]
    ax = axis % values[0].ndim
    bounds = np.cumsum([0] + [v.shape[ax] for v in values])
    parents = []
    for k, v in enumerate(items):
        sl = [slice(None)] * values[0].ndim
        sl[ax] = slice(bounds[k], bounds[k + 1])
        parents.append((v, lambda g, sl=tuple(sl): g[sl]))
    return tape.record(np.concatenate(values, axis=ax), parents)


def total(x: Var) -> Var:
    shape = x.value.shape
    return x.tape.record(np.array(x.value.sum()), [(x, lambda g: np.broadcast_to(g, shape).copy())])


def log_softmax(x: Var) -> Var:
    """Row-wise log-softmax over the last axis."""
    v = x.value
    m = v.max(axis=-1, keepdims=True)
    out = v - m - np.log(np.exp(v - m).sum(axis=-1, keepdims=True))
    p = np.exp(out)
    return x.tape.record(out, [(x, lambda g: g - p * g.sum(axis=-1, keepdims=True))])


def stop_gradient(x: Var) -> Var:
    """Forward identity; blocks the reverse pass."""
    return x.tape.record(x.value.copy(), [])


def affine_rows(x: Var, rotation: np.ndarray, offset: np.ndarray) -> Var:
    """``x @ rotation + offset`` with constant ``rotation`` and ``offset``."""
    return add(matmul(x, x.tape.constant(rotation)), offset)


# -- losses -----------------------------------------------------------------

def logsumexp(v: np.ndarray, axis=None, keepdims: bool = False) -> np.ndarray:
    m = np.max(v, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True))
    if not keepdims:
        out = np.squeeze(out, axis=axis) if axis is not None else out.reshape(())
    return out


def softmax_cross_entropy(logits: Var, label: int) -> Var:
    """``-log softmax(logits)[label]`` for a 1-D logit vector."""
    v = logits.value
    if v.ndim != 1:
        raise DimensionError(f"softmax_cross_entropy expects a vector, got {v.shape}")
    if not 0 <= label < v.shape[0]:
        raise IndexError(f"label {label} out of range for {v.shape[0]} classes")
    lse = logsumexp(v)
    p = np.exp(v - lse)
    onehot = np.zeros_like(v)
    onehot[label] = 1.0
    return logits.tape.record(np.array(lse - v[label]), [(logits, lambda g: g * (p - onehot))])


def huber(pred: Var, target, delta: float = 1.0) -> Var:
    """Sum of elementwise Huber losses with threshold ``delta``."""
    target = np.asarray(target, dtype=np.float64)
    if pred.value.shape != target.shape:
        raise DimensionError(f"huber: {pred.value.shape} vs {target.shape}")
    if delta <= 0:
        raise ContractError("huber delta must be positive")
    e = pred.value - target
    a = np.abs(e)
    quad = a <= delta
    pred.tape.branches.append(quad)
    val = np.where(quad, 0.5 * e * e, delta * (a - 0.5 * delta)).sum()
    dval = np.where(quad, e, delta * np.sign(e))
    return pred.tape.record(np.array(val), [(pred, lambda g: g * dval)])


# -- networks ---------------------------------------------------------------

def mlp_forward(x: Var, layer_names: Sequence[str], params: ParamStore, tape: Tape) -> Var:
    """Dense layers ``name.W``/``name.b``; ReLU between layers, linear output.

    ``x`` may be a single vector or a batch of row vectors.
    """
    x = as_var(x, tape)
    squeeze = x.value.ndim == 1
    if squeeze:
        x = reshape(x, (1, -1))
    for k, name in enumerate(layer_names):
        w = params[f"{name}.W"]
        if x.value.shape[1] != w.shape[0]:
            raise DimensionError(
                f"layer {name!r} expects {w.shape[0]} inputs, got {x.value.shape[1]}")
        x = matmul(x, tape.param(params, f"{name}.W")) + tape.param(params, f"{name}.b")
        if k < len(layer_names) - 1:
            x = relu(x)
    if squeeze:
        x = reshape(x, (-1,))
    return x


# -- reverse pass -----------------------------------------------------------

def backward_gradients(tape: Tape, loss: Var, params: ParamStore | None = None) -> dict[str, np.ndarray]:
    """Reverse accumulation from a scalar ``loss``.

    Returns a gradient per parameter leaf on the tape. When ``params`` is
    given, every parameter in it gets an entry (zeros when off-path).
    """
    if loss.value.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.value.shape}")
    if loss.tape is not tape:
        raise ContractError("loss was not recorded on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(tape.nodes):
        g = grads.get(id(node))
        if g is None or not node.parents:
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            prev = grads.get(id(parent))
            grads[id(parent)] = contrib if prev is None else prev + contrib
    out: dict[str, np.ndarray] = {}
    if params is not None:
        out = params.zeros_like()
    for name, leaf in tape._leaves.items():
        g = grads.get(id(leaf))
        out[name] = np.zeros_like(leaf.value) if g is None else np.asarray(g, dtype=np.float64).reshape(leaf.value.shape)
    return out


# -- gradient checking ------------------------------------------------------

@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    per_param: dict[str, float] = field(default_factory=dict)
    checked: int = 0
    skipped: int = 0

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def relative_error(a, b, floor: float = 1e-6) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def finite_diff_check(
    loss_fn: Callable[[ParamStore, Tape], Var],
    params: ParamStore,
    eps: float = 1e-6,
    *,
    value_fn: Callable[[ParamStore], float] | None = None,
    names: Iterable[str] | None = None,
    max_entries: int | None = None,
    seed: int = 0,
    floor: float = 1e-6,
    grads: dict[str, np.ndarray] | None = None,
    skip_kinks: bool = False,
) -> GradCheckResult:
    """Compare reverse-mode gradients against central differences.

    ``loss_fn`` builds the differentiated loss on a fresh tape. ``value_fn``
    (default: the value of ``loss_fn``) is what gets finite-differenced; pass
    a separate one when the tape loss is a surrogate whose gradient should
    match another objective. ``max_entries`` samples that many coordinates per
    parameter (seeded) instead of all of them. ``grads`` overrides the
    reverse-mode gradients, which is how negative controls are run. With
    ``skip_kinks`` a coordinate is skipped (and counted) when either perturbed
    evaluation takes a different relu/huber branch than the base point, since
    the loss is not differentiable across that step.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")

    def value(p: ParamStore) -> float:
        if value_fn is not None:
            v = float(value_fn(p))
        else:
            v = float(loss_fn(p, Tape()).value)
        if not np.isfinite(v):
            raise NumericError("loss is not finite during finite differencing")
        return v

    def branches(p: ParamStore) -> list[np.ndarray]:
        tape = Tape()
        loss_fn(p, tape)
        return tape.branches

    def same_branches(a, b) -> bool:
        return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))

    base_branches = branches(params) if skip_kinks else None
    if grads is None:
        tape = Tape()
        loss = loss_fn(params, tape)
        if not np.isfinite(loss.value).all():
            raise NumericError("loss is not finite")
        grads = backward_gradients(tape, loss, params)
    checked = skipped = 0
    rng = np.random.default_rng(seed)
    work = params.copy()
    worst = (0.0, "", ())
    per_param: dict[str, float] = {}
    for name in (names if names is not None else params.names()):
        base = params[name]
        flat_idx = np.arange(base.size)
        if max_entries is not None and base.size > max_entries:
            flat_idx = np.sort(rng.choice(base.size, size=max_entries, replace=False))
        param_worst = 0.0
        for flat in flat_idx:
            idx = np.unravel_index(flat, base.shape)
            arr = base.copy()
            arr[idx] = base[idx] + eps
            work[name] = arr
            up = value(work)
            kink = skip_kinks and not same_branches(branches(work), base_branches)
            arr[idx] = base[idx] - eps
            work[name] = arr
            down = value(work)
            kink = kink or (skip_kinks and not same_branches(branches(work), base_branches))
            work[name] = base
            if kink:
                skipped += 1
                continue
            checked += 1
            fd = (up - down) / (2 * eps)
            err = float(relative_error(grads[name][idx], fd, floor))
            param_worst = max(param_worst, err)
            if err > worst[0]:
                worst = (err, name, tuple(int(i) for i in idx))
        per_param[name] = param_worst
    return GradCheckResult(worst[0], worst[1], worst[2], per_param, checked, skipped)


# -- optimizer --------------------------------------------------------------

@dataclass
class AdamWConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


@dataclass
class AdamWState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: ParamStore, grads: dict[str, np.ndarray], hyper: AdamWConfig,
               state: AdamWState) -> AdamWState:
    """One AdamW update in place (decoupled weight decay)."""
    for name in params.names():
        g = grads.get(name)
        if g is not None and not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = hyper.beta1, hyper.beta2
    for name in params.names():
        p = params[name]
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        elif state.m[name].shape != p.shape:
            raise DimensionError(f"optimizer state for {name!r} has wrong shape")
        m = state.m[name] = b1 * state.m[name] + (1 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p *= 1.0 - hyper.lr * hyper.weight_decay
        p -= hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
    return state
