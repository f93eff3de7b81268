"""
Dense tensors with reverse-mode automatic differentiation, and the Adam optimizer.

Every forward op records a closure mapping the output gradient to its input
gradients. ``Tensor.backward`` walks the graph once in reverse topological
order; the graph is released afterwards, so a second backward over the same
forward pass is an error.
"""
import contextlib
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import Precision

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence]

_dtype: np.dtype = Precision.FLOAT64.dtype
_grad_enabled = True
_kink_log: Optional[List[np.ndarray]] = None

GELU_C = math.sqrt(2.0 / math.pi)


class GraphError(RuntimeError):
    """Raised on misuse of the autodiff graph"""


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible"""


def default_dtype() -> np.dtype:
    return _dtype


@contextlib.contextmanager
def precision(mode: Precision) -> Iterator[None]:
    """Temporarily switch the tensor precision"""
    global _dtype
    previous = _dtype
    _dtype = mode.dtype
    try:
        yield
    finally:
        _dtype = previous


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run forward ops without recording a graph"""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


@contextlib.contextmanager
def record_kinks() -> Iterator[List[np.ndarray]]:
    """Collect the active-set pattern of every relu evaluated inside the block"""
    global _kink_log
    previous = _kink_log
    _kink_log = []
    try:
        yield _kink_log
    finally:
        _kink_log = previous


class Tensor:
    """A numpy array that remembers how it was computed"""

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._op = ""
        self._released = False

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None and not self._released

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    # Operator sugar

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return add(self, neg(_as_tensor(other)))
    def __rsub__(self, other): return add(other, neg(self))
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __neg__(self): return neg(self)
    def __truediv__(self, other): return div(self, other)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, key): return slice_(self, key)

    def sum(self, axis=None, keepdims=False): return sum_(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 else shape)
    def transpose(self, *axes): return transpose(self, axes[0] if len(axes) == 1 else axes)
    def softmax(self, axis=-1): return softmax(self, axis)
    def tanh(self): return tanh(self)
    def relu(self): return relu(self)
    def sigmoid(self): return sigmoid(self)
    def gelu(self): return gelu(self)

    def backward(self) -> None:
        """
        Populate ``grad`` on every leaf tensor the scalar self depends on.

        Raises:
            GraphError: non-scalar output, or the graph was already consumed
        """
        if self.data.size != 1:
            raise GraphError(f"backward needs a scalar loss, got shape {self.shape}")
        if self._released:
            raise GraphError("graph already consumed by backward(); run the forward pass again")
        if not self.requires_grad:
            raise GraphError("loss does not depend on any tensor requiring grad")

        order = _topological_order(self)
        pending: Dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if node._released:
                raise GraphError("graph already consumed by backward(); run the forward pass again")
            if node._backward is None:
                if g is not None:
                    g = g.astype(node.data.dtype, copy=False)
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            if g is not None:
                for parent, parent_grad in zip(node._parents, node._backward(g)):
                    if parent_grad is None or not parent.requires_grad:
                        continue
                    key = id(parent)
                    pending[key] = parent_grad if key not in pending else pending[key] + parent_grad
            node._parents = ()
            node._backward = None
            node._released = True


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def _as_tensor(x: Union[Tensor, ArrayLike]) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], op: str,
            backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    out = Tensor(data)
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError(f"{op} produced non-finite values")
    out._op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


# Elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)
    return _result(a.data + b.data, (a, b), "add",
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _result(-a.data, (a,), "neg", lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("mul", a, b)
    return _result(a.data * b.data, (a, b), "mul",
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("div", a, b)
    return _result(a.data / b.data, (a, b), "div",
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes"""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(np.matmul(a.data, b.data), (a, b), "matmul", backward)


# Reductions and shape ops

def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), "sum", backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    count = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(sum_(a, axis, keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    return _result(a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    inverse = np.argsort(axes)
    return _result(np.transpose(a.data, axes), (a,), "transpose",
                   lambda g: (np.transpose(g, inverse),))


def slice_(a, key) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return (full,)

    return _result(a.data[key], (a,), "slice", backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}")
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(data, tensors, "concat", lambda g: tuple(np.split(g, sizes, axis=axis)))


# Nonlinearities

def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    return _result(s, (a,), "softmax",
                   lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def layer_norm(x, gamma: Optional[Tensor] = None, beta: Optional[Tensor] = None,
               eps: float = 1e-12) -> Tensor:
    """Normalize over the last axis, then apply the optional affine transform"""
    x = _as_tensor(x)
    n = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    out = xhat
    parents = [x]
    if gamma is not None:
        out = out * gamma.data
        parents.append(gamma)
    if beta is not None:
        out = out + beta.data
        parents.append(beta)

    def backward(g):
        dxhat = g * gamma.data if gamma is not None else g
        dx = inv_std / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        grads = [dx]
        if gamma is not None:
            grads.append(_unbroadcast(g * xhat, gamma.shape))
        if beta is not None:
            grads.append(_unbroadcast(g, beta.shape))
        return grads

    return _result(out, parents, "layer_norm", backward)


def gelu(a) -> Tensor:
    """GELU, tanh approximation"""
    a = _as_tensor(a)
    x = a.data
    t = np.tanh(GELU_C * (x + 0.044715 * x ** 3))
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dt = (1.0 - t * t) * GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * dt),)

    return _result(out, (a,), "gelu", backward)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), "tanh", lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    active = a.data > 0
    if _kink_log is not None:
        _kink_log.append(active.copy())
    return _result(np.where(active, a.data, 0.0), (a,), "relu", lambda g: (g * active,))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out = _stable_sigmoid(a.data)
    return _result(out, (a,), "sigmoid", lambda g: (g * out * (1.0 - out),))


def dropout(a, rate: float, rng: Optional[np.random.Generator], training: bool = True) -> Tensor:
    """Inverted dropout; the identity in eval mode"""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    a = _as_tensor(a)
    if not training or rate == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    mask = (rng.random(a.shape) >= rate).astype(a.data.dtype) / (1.0 - rate)
    return _result(a.data * mask, (a,), "dropout", lambda g: (g * mask,))


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of an embedding table"""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError(f"embedding id out of range [0, {table.shape[0]})")

    def backward(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids, g)
        return (grad,)

    return _result(table.data[ids], (table,), "embedding", backward)


def softplus_array(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def binary_cross_entropy_with_logits(logits: Tensor, targets: np.ndarray,
                                     pos_weight: Optional[np.ndarray] = None,
                                     sample_weight: Optional[np.ndarray] = None) -> Tensor:
    """
    Mean of -w[p*y*log(sigmoid(x)) + (1-y)*log(1-sigmoid(x))] in softplus form.

    log(sigmoid(x)) = -softplus(-x) and log(1 - sigmoid(x)) = -softplus(x).
    pos_weight broadcasts over labels; a 1-D sample_weight holds one weight
    per sample, a 2-D one a weight per (sample, label).
    """
    x = logits.data
    y = np.asarray(targets, dtype=x.dtype)
    p = np.ones(1, dtype=x.dtype) if pos_weight is None else np.asarray(pos_weight, dtype=x.dtype)
    w = np.ones(1, dtype=x.dtype) if sample_weight is None else np.asarray(sample_weight, dtype=x.dtype)
    if sample_weight is not None and w.ndim == 1 and x.ndim == 2:
        w = w[:, None]   # one weight per sample
    elements = w * (p * y * softplus_array(-x) + (1.0 - y) * softplus_array(x))
    count = elements.size

    def backward(g):
        s = _stable_sigmoid(x)
        return (g * np.broadcast_to(w * (p * y * (s - 1.0) + (1.0 - y) * s), x.shape) / count,)

    return _result(elements.mean(), (logits,), "bce_with_logits", backward)


# Optimizer

@dataclass
class OptimizerState:
    """Adam moments and hyper-parameters"""

    lr: float = 1e-5
    eps: float = 1e-6
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
              state: OptimizerState) -> Tuple[Dict[str, np.ndarray], OptimizerState]:
    """
    One bias-corrected Adam step with decoupled weight decay.

    p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is not None and g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
    t = state.step + 1
    new_params: Dict[str, np.ndarray] = {}
    new_m: Dict[str, np.ndarray] = {}
    new_v: Dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        update = m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * p
        new_params[name] = (p - state.lr * update).astype(p.dtype, copy=False)
        new_m[name] = m
        new_v[name] = v
    new_state = OptimizerState(state.lr, state.eps, state.weight_decay, state.beta1,
                               state.beta2, t, new_m, new_v)
    return new_params, new_state


class AdamOptimizer:
    """Applies ``adam_step`` to a dict of parameter tensors in place"""

    def __init__(self, parameters: Dict[str, Tensor], lr: float = 1e-5, eps: float = 1e-6,
                 weight_decay: float = 0.01, beta1: float = 0.9, beta2: float = 0.999):
        self.params = parameters
        self.state = OptimizerState(lr, eps, weight_decay, beta1, beta2)

    def step(self) -> None:
        arrays = {name: p.data for name, p in self.params.items()}
        grads = {name: p.grad for name, p in self.params.items() if p.grad is not None}
        updated, self.state = adam_step(arrays, grads, self.state)
        for name, p in self.params.items():
            p.data = updated[name]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


# Gradient checking

@dataclass
class GradCheckReport:
    """Outcome of a finite-difference gradient check"""

    max_rel_error: float
    checked: int
    excluded: int
    worst: Optional[Tuple[str, Tuple[int, ...]]] = None


def finite_diff_check(function: Callable[[], Tensor], params: Dict[str, Tensor],
                      h: float = 1e-5, floor: float = 1e-6,
                      max_coords_per_param: Optional[int] = None,
                      rng: Optional[np.random.Generator] = None) -> GradCheckReport:
    """
    Compare analytic gradients with central differences.

    Relative error per coordinate is |a - n| / max(|a| + |n|, floor). A
    coordinate whose perturbation flips any relu between active and inactive
    sits on a kink and is excluded from the maximum.

    Args:
        function: builds a scalar loss from params, deterministically
        params: named float64 tensors requiring grad
        max_coords_per_param: check a random subset of this many coordinates
    """
    for name, p in params.items():
        if p.data.dtype != np.float64:
            raise ValueError(f"finite_diff_check needs float64 tensors; {name} is {p.data.dtype}")
        p.grad = None
    with record_kinks() as base_kinks:
        loss = function()
    loss.backward()
    analytic = {name: (p.grad if p.grad is not None else np.zeros_like(p.data)).copy()
                for name, p in params.items()}

    def evaluate() -> Tuple[float, List[np.ndarray]]:
        with no_grad(), record_kinks() as kinks:
            value = float(function().data)
        return value, kinks

    def same_pattern(a: List[np.ndarray], b: List[np.ndarray]) -> bool:
        return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))

    rng = rng or np.random.default_rng(0)
    worst, max_err, checked, excluded = None, 0.0, 0, 0
    for name, p in params.items():
        coords = list(np.ndindex(*p.shape))
        if max_coords_per_param is not None and len(coords) > max_coords_per_param:
            picks = rng.choice(len(coords), size=max_coords_per_param, replace=False)
            coords = [coords[i] for i in sorted(picks)]
        for idx in coords:
            original = p.data[idx]
            p.data[idx] = original + h
            f_plus, kinks_plus = evaluate()
            p.data[idx] = original - h
            f_minus, kinks_minus = evaluate()
            p.data[idx] = original
            if not (same_pattern(base_kinks, kinks_plus) and same_pattern(base_kinks, kinks_minus)):
                excluded += 1
                continue
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(analytic[name][idx])
            err = abs(a - numeric) / max(abs(a) + abs(numeric), floor)
            checked += 1
            if err > max_err:
                max_err, worst = err, (name, tuple(int(i) for i in idx))
    if excluded:
        logger.info(f"Gradient check excluded {excluded} coordinates at relu kinks")
    return GradCheckReport(max_err, checked, excluded, worst)
