"""
Dense float64 tensors with reverse-mode automatic differentiation.

Every operation builds its result eagerly and remembers how to push a
gradient back to its inputs (define-by-run): the graph is thrown away and
rebuilt on every forward pass, so ablation variants can change its
topology freely.
"""
import threading
from contextlib import contextmanager

import numpy as np

from .Errors import DimensionError, ScenaFuseError
from .Precision import DTYPE, LAYER_NORM_EPS, LOG_CLAMP, MASK_VALUE, to_float64

# per-thread switches: a tape and its tensors never leave their thread
_state = threading.local()


def _recording() -> bool:
    return getattr(_state, "recording", True)


@contextmanager
def no_grad():
    """
    Disable graph recording in the current thread (evaluation, benchmarks)
    """
    previous = _recording()
    _state.recording = False
    try:
        yield
    finally:
        _state.recording = previous


class MultiplyAddCounter:
    """Counts the multiply-adds performed by matmul inside a `count_multiply_adds` block"""
    def __init__(self):
        self.total = 0


@contextmanager
def count_multiply_adds():
    counter = MultiplyAddCounter()
    previous = getattr(_state, "counter", None)
    _state.counter = counter
    try:
        yield counter
    finally:
        _state.counter = previous


class Tensor:
    """
    A dense n-dimensional float64 array with an optional gradient buffer

    Note: data is never modified by an operation, only by optimizers and by
    the finite-difference checker, both outside a live tape.
    """
    def __init__(self, data, requires_grad : bool = False, copy : bool = True):
        """
        Tensor constructor

        :param data: Array-like content (copied unless copy is False)
        :param requires_grad: True for leaves that must receive a gradient
        :type requires_grad: bool
        """
        self.data : np.ndarray = np.array(data, dtype=DTYPE) if copy else to_float64(data)
        self.grad : np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents : tuple = ()
        self._backward = None
        self._op = ""

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        grad = "" if self.grad is None else ", grad"
        op = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}{op}{grad})"

    # operator sugar; python scalars become scale / shift
    def __add__(self, other):
        return shift(self, other) if _is_scalar(other) else add(self, other)

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        return shift(self, -other) if _is_scalar(other) else sub(self, other)

    def __rsub__(self, other):
        return shift(scale(self, -1.0), other)

    def __mul__(self, other):
        return scale(self, other) if _is_scalar(other) else mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if not _is_scalar(other):
            raise DimensionError("only division by a scalar is supported")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _is_scalar(value) -> bool:
    return isinstance(value, (int, float, np.floating, np.integer))


def _result(data, parents : tuple, rule, op : str) -> Tensor:
    out = Tensor(data, copy=False)
    if _recording() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = rule
        out._op = op
    return out


def _accumulate(tensor : Tensor, grad : np.ndarray):
    if not tensor.requires_grad:
        return
    if tensor.grad is None:
        tensor.grad = np.zeros_like(tensor.data)
    tensor.grad += grad


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

class ComputationTape:
    """
    Primitive applications reachable from one output, in topological order
    (every node after all of its inputs)
    """
    def __init__(self, nodes : list[Tensor]):
        self.nodes = nodes

    @classmethod
    def record(cls, output : Tensor):
        """
        Collect the graph that produced output

        :param output: Last tensor of the forward pass
        :type output: Tensor
        """
        order : list[Tensor] = []
        visited : set[int] = set()
        stack = [(output, False)]
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
                if id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def replay_backward(self, seed : np.ndarray):
        """
        Walk the tape in reverse, accumulating gradients into every input

        Intermediate gradients restart from zero, leaf gradients keep
        accumulating across calls until zeroed.
        """
        output = self.nodes[-1]
        for node in self.nodes:
            if not node.is_leaf:
                node.grad = np.zeros_like(node.data)
        _accumulate(output, seed)
        for node in reversed(self.nodes):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def backward(loss : Tensor):
    """
    Populate .grad on every requires_grad tensor the loss depends on

    :param loss: Scalar output of a recorded forward pass
    :type loss: Tensor
    """
    if loss.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    ComputationTape.record(loss).replay_backward(np.ones_like(loss.data))


def zero_grad(params):
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# Broadcasting (trailing-axis only: l×1 or 1×t against l×t)
# ---------------------------------------------------------------------------

def _check_broadcast(a : Tensor, b : Tensor, op : str):
    if a.shape == b.shape:
        return
    if a.ndim == 2 and b.ndim == 2:
        (la, ta), (lb, tb) = a.shape, b.shape
        if la == lb and (ta == 1 or tb == 1):
            return
        if ta == tb and (la == 1 or lb == 1):
            return
    raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable")


def _unbroadcast(grad : np.ndarray, shape : tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    axes = tuple(i for i, extent in enumerate(shape) if extent == 1 and grad.shape[i] != 1)
    return grad.sum(axis=axes, keepdims=True)


# ---------------------------------------------------------------------------
# Elementwise operations (registered by name for `elementwise`)
# ---------------------------------------------------------------------------

ELEMENTWISE = dict()


def elementwise_op(name : str):
    """
    Decorator that registers an elementwise primitive under name
    """
    def wrapper(func):
        ELEMENTWISE[name] = func
        return func
    return wrapper


def elementwise(x : Tensor, fn : str, operand=None) -> Tensor:
    """
    Apply a registered elementwise primitive

    :param x: Input tensor
    :param fn: One of tanh, sigmoid, relu, mul, add, sub, scale, shift
    :type fn: str
    :param operand: Second tensor for binary variants, scalar for scale / shift
    """
    if fn not in ELEMENTWISE:
        raise ScenaFuseError(f"unknown elementwise function {fn!r}")
    op = ELEMENTWISE[fn]
    return op(x) if operand is None else op(x, operand)


@elementwise_op("add")
def add(a : Tensor, b : Tensor) -> Tensor:
    _check_broadcast(a, b, "add")

    def rule(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))
    return _result(a.data + b.data, (a, b), rule, "add")


@elementwise_op("sub")
def sub(a : Tensor, b : Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")

    def rule(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))
    return _result(a.data - b.data, (a, b), rule, "sub")


@elementwise_op("mul")
def mul(a : Tensor, b : Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")

    def rule(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))
    return _result(a.data * b.data, (a, b), rule, "mul")


@elementwise_op("scale")
def scale(x : Tensor, factor : float) -> Tensor:
    factor = float(factor)

    def rule(g):
        _accumulate(x, g * factor)
    return _result(x.data * factor, (x,), rule, "scale")


@elementwise_op("shift")
def shift(x : Tensor, offset : float) -> Tensor:
    def rule(g):
        _accumulate(x, g)
    return _result(x.data + float(offset), (x,), rule, "shift")


@elementwise_op("tanh")
def tanh(x : Tensor) -> Tensor:
    y = np.tanh(x.data)

    def rule(g):
        _accumulate(x, g * (1.0 - y * y))
    return _result(y, (x,), rule, "tanh")


@elementwise_op("sigmoid")
def sigmoid(x : Tensor) -> Tensor:
    # tanh form: no overflow for large |x|, exactly 0.5 at 0
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def rule(g):
        _accumulate(x, g * y * (1.0 - y))
    return _result(y, (x,), rule, "sigmoid")


@elementwise_op("relu")
def relu(x : Tensor) -> Tensor:
    active = x.data > 0

    def rule(g):
        _accumulate(x, g * active)
    return _result(np.where(active, x.data, 0.0), (x,), rule, "relu")


def dropout(x : Tensor, p : float, rng : np.random.Generator | None) -> Tensor:
    """
    Inverted dropout; identity when p is 0 or no random stream is given
    """
    if p <= 0.0 or rng is None:
        return x
    if p >= 1.0:
        raise ScenaFuseError(f"dropout probability must be below 1, got {p}")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)

    def rule(g):
        _accumulate(x, g * keep)
    return _result(x.data * keep, (x,), rule, "dropout")


# ---------------------------------------------------------------------------
# Structural operations
# ---------------------------------------------------------------------------

def matmul(a : Tensor, b : Tensor) -> Tensor:
    """
    Matrix product of m×p by p×n (or a batch of them with equal leading extent)

    :param a: Left operand
    :param b: Right operand
    """
    if a.ndim != b.ndim or a.ndim not in (2, 3) or a.shape[-1] != b.shape[-2] \
            or (a.ndim == 3 and a.shape[0] != b.shape[0]):
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    counter = getattr(_state, "counter", None)
    if counter is not None:
        counter.total += int(np.prod(a.shape)) * b.shape[-1]

    def rule(g):
        if a.requires_grad:
            _accumulate(a, g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            _accumulate(b, np.swapaxes(a.data, -1, -2) @ g)
    return _result(a.data @ b.data, (a, b), rule, "matmul")


def transpose(x : Tensor, axes : tuple | None = None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))

    def rule(g):
        _accumulate(x, np.transpose(g, inverse))
    return _result(np.ascontiguousarray(np.transpose(x.data, axes)), (x,), rule, "transpose")


def reshape(x : Tensor, shape : tuple) -> Tensor:
    try:
        data = x.data.reshape(shape)
    except ValueError as error:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}") from error

    def rule(g):
        _accumulate(x, g.reshape(x.shape))
    return _result(data, (x,), rule, "reshape")


def split_heads(x : Tensor, heads : int) -> Tensor:
    """l×d -> heads×l×(d/heads)"""
    length, width = x.shape
    if width % heads:
        raise DimensionError(f"{heads} heads do not divide width {width}")
    return transpose(reshape(x, (length, heads, width // heads)), (1, 0, 2))


def merge_heads(x : Tensor) -> Tensor:
    """heads×l×d_h -> l×(heads·d_h)"""
    heads, length, width = x.shape
    return reshape(transpose(x, (1, 0, 2)), (length, heads * width))


def _check_axis(x : Tensor, axis : int, op : str) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"{op}: axis {axis} is invalid for shape {x.shape}")
    return axis % x.ndim


def softmax(x : Tensor, axis : int = -1) -> Tensor:
    """
    Softmax along axis, computed after subtracting the per-slice maximum

    :param x: Scores
    :param axis: Axis whose slices become distributions
    :type axis: int
    """
    axis = _check_axis(x, axis, "softmax")
    shifted = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    y = shifted / shifted.sum(axis=axis, keepdims=True)

    def rule(g):
        _accumulate(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))
    return _result(y, (x,), rule, "softmax")


def concat(a : Tensor, b : Tensor, axis : int = 0) -> Tensor:
    """
    Join two tensors along axis; every other extent must agree

    :param a: First block
    :param b: Second block
    :param axis: Concatenation axis
    """
    if a.ndim != b.ndim:
        raise DimensionError(f"concat: ranks differ for shapes {a.shape} and {b.shape}")
    axis = _check_axis(a, axis, "concat")
    if any(a.shape[i] != b.shape[i] for i in range(a.ndim) if i != axis):
        raise DimensionError(f"concat: shapes {a.shape} and {b.shape} differ off axis {axis}")
    cut = a.shape[axis]

    def rule(g):
        head, tail = np.split(g, [cut], axis=axis)
        _accumulate(a, head)
        _accumulate(b, tail)
    return _result(np.concatenate([a.data, b.data], axis=axis), (a, b), rule, "concat")


def slice_axis(x : Tensor, start : int, stop : int, axis : int = 0) -> Tensor:
    axis = _check_axis(x, axis, "slice")
    if not 0 <= start <= stop <= x.shape[axis]:
        raise DimensionError(f"slice [{start}:{stop}] out of range for axis {axis} of {x.shape}")
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def rule(g):
        full = np.zeros_like(x.data)
        full[index] = g
        _accumulate(x, full)
    return _result(x.data[index], (x,), rule, "slice")


def split(x : Tensor, cut : int, axis : int = 0) -> tuple[Tensor, Tensor]:
    """Inverse of concat: the first `cut` entries along axis, then the rest"""
    axis = _check_axis(x, axis, "split")
    return slice_axis(x, 0, cut, axis), slice_axis(x, cut, x.shape[axis], axis)


def take(x : Tensor, indices) -> Tensor:
    """
    Gather rows of x (embedding lookup); the backward pass scatter-adds

    :param x: Table with rows along axis 0
    :param indices: Integer row ids
    """
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= x.shape[0]):
        raise DimensionError(f"take: ids must lie in [0, {x.shape[0]}), got {indices.min()}..{indices.max()}")

    def rule(g):
        full = np.zeros_like(x.data)
        np.add.at(full, indices, g)
        _accumulate(x, full)
    return _result(x.data[indices], (x,), rule, "take")


def stack(tensors : list[Tensor]) -> Tensor:
    if not tensors:
        raise DimensionError("stack needs at least one tensor")
    shape = tensors[0].shape
    if any(t.shape != shape for t in tensors):
        raise DimensionError(f"stack: shapes differ {[t.shape for t in tensors]}")

    def rule(g):
        for i, t in enumerate(tensors):
            _accumulate(t, g[i])
    return _result(np.stack([t.data for t in tensors]), tuple(tensors), rule, "stack")


def sum(x : Tensor) -> Tensor:
    def rule(g):
        _accumulate(x, np.broadcast_to(g, x.shape).copy())
    return _result(np.array(x.data.sum()), (x,), rule, "sum")


def mean(x : Tensor) -> Tensor:
    return scale(sum(x), 1.0 / x.size)


def mask_keys(scores : Tensor, key_mask) -> Tensor:
    """
    Add MASK_VALUE to the scores of keys whose mask entry is 0

    :param scores: (..., queries, keys) attention scores
    :param key_mask: length-keys array of 1 (real) / 0 (padding)
    """
    key_mask = np.asarray(key_mask)
    if key_mask.shape != (scores.shape[-1],):
        raise DimensionError(f"key mask of shape {key_mask.shape} does not fit scores {scores.shape}")
    bias = np.where(key_mask > 0, 0.0, MASK_VALUE)

    def rule(g):
        _accumulate(scores, g)
    return _result(scores.data + bias, (scores,), rule, "mask")


# ---------------------------------------------------------------------------
# Fused numerics
# ---------------------------------------------------------------------------

def layer_norm(x : Tensor, gain : Tensor, bias : Tensor, eps : float = LAYER_NORM_EPS) -> Tensor:
    """
    Per-row normalisation of an l×t tensor followed by the affine map gain, bias

    :param x: l×t input
    :param gain: length-t gain
    :param bias: length-t bias
    :param eps: Added to the variance under the square root
    """
    if x.ndim != 2 or gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise DimensionError(f"layer_norm: input {x.shape} with gain {gain.shape} and bias {bias.shape}")
    width = x.shape[1]
    centered = x.data - x.data.mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=1, keepdims=True) + eps)
    normalized = centered * inv_std

    def rule(g):
        if gain.requires_grad:
            _accumulate(gain, (g * normalized).sum(axis=0))
        if bias.requires_grad:
            _accumulate(bias, g.sum(axis=0))
        if x.requires_grad:
            d_norm = g * gain.data
            _accumulate(x, inv_std / width * (
                width * d_norm
                - d_norm.sum(axis=1, keepdims=True)
                - normalized * (d_norm * normalized).sum(axis=1, keepdims=True)))
    return _result(normalized * gain.data + bias.data, (x, gain, bias), rule, "layer_norm")


def cross_entropy(logits : Tensor, labels) -> Tensor:
    """
    Mean categorical cross-entropy of B×C logits against integer labels

    :param logits: B×C unnormalised scores
    :param labels: B class ids in [0, C)
    """
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy: logits {logits.shape} against labels {labels.shape}")
    classes = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise DimensionError(f"cross_entropy: labels must lie in [0, {classes})")
    batch = logits.shape[0]
    rows = np.arange(batch)
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    picked = log_probs[rows, labels]
    floor = np.log(LOG_CLAMP)
    clamped = picked < floor

    def rule(g):
        grad = np.exp(log_probs)
        grad[rows, labels] -= 1.0
        grad[clamped] = 0.0
        _accumulate(logits, grad * (g / batch))
    return _result(np.array(-np.maximum(picked, floor).mean()), (logits,), rule, "cross_entropy")


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------

def grad_check(f, params : list[Tensor], eps : float = 1e-5) -> float:
    """
    Compare analytic gradients with central finite differences

    Returns the maximum over all coordinates of |a - n| / max(1e-8, |a| + |n|);
    thresholding is left to the caller.

    :param f: Deterministic zero-argument callable returning a scalar Tensor
    :param params: Leaf tensors to check
    :param eps: Finite-difference step
    """
    zero_grad(params)
    backward(f())
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            with no_grad():
                flat[i] = original + eps
                plus = f().item()
                flat[i] = original - eps
                minus = f().item()
            flat[i] = original
            numeric = (plus - minus) / (2.0 * eps)
            a = analytic.reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / max(1e-8, abs(a) + abs(numeric)))
    return worst
