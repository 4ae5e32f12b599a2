"""
Dense float64 tensor with tape-based reverse-mode differentiation

Every differentiable operation is a Function subclass: forward works on raw
numpy arrays, backward maps the output gradient to one gradient per operand.
Broadcasting is deliberately absent apart from scalar operands; use
expand() to make a broadcast explicit.
"""
from contextlib import contextmanager
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from core.exceptions import NonFiniteError, ShapeError

_grad_enabled = True


@contextmanager
def no_grad() -> Iterator[None]:
    """Run operations without recording them on the tape"""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """
    Dense N-dimensional float64 array with an optional gradient

    Leaves created by the user own a copy of their data; results of
    operations keep a link to the Function that produced them until
    backward() consumes the tape.
    """

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64, copy=True)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._ctx: Optional["Function"] = None

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool, ctx: Optional["Function"]) -> "Tensor":
        out = cls.__new__(Tensor)
        out.data = np.ascontiguousarray(data, dtype=np.float64)
        out.requires_grad = requires_grad
        out.grad = None
        out._ctx = ctx
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._ctx is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, requires_grad=False, ctx=None)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        if isinstance(other, Tensor):
            return Add.apply(self, other)
        return Shift.apply(self, value=float(other))

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return Sub.apply(self, other)
        return Shift.apply(self, value=-float(other))

    def __rsub__(self, other):
        return Shift.apply(Scale.apply(self, factor=-1.0), value=float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return Mul.apply(self, other)
        return Scale.apply(self, factor=float(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return Scale.apply(self, factor=-1.0)

    def __matmul__(self, other):
        return MatMul.apply(self, other)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def as_array(value: Union[Tensor, np.ndarray, Sequence, float]) -> np.ndarray:
    if isinstance(value, Tensor):
        return value.data
    return np.asarray(value, dtype=np.float64)


class Function:
    """One recorded operation with backlinks to its operand tensors"""

    def __init__(self, *parents: Tensor):
        self.parents = parents

    @classmethod
    def apply(cls, *parents: Tensor, **kwargs) -> Tensor:
        ctx = cls(*parents)
        out = ctx.forward(*[p.data for p in parents], **kwargs)
        if not np.isfinite(out).all():
            raise NonFiniteError(f"{cls.__name__} produced non-finite values")
        track = _grad_enabled and any(p.requires_grad for p in parents)
        return Tensor._wrap(out, requires_grad=track, ctx=ctx if track else None)

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError


class GradTape:
    """
    Differentiable operations reachable from a root, in topological order

    Every node appears after all nodes producing its inputs.
    """

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    @classmethod
    def record(cls, root: Tensor) -> "GradTape":
        order: List[Tensor] = []
        visited = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._ctx is not None:
                for parent in node._ctx.parents:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def consume(self) -> None:
        """Drop operation links so the graph can be freed"""
        for node in self.nodes:
            if node._ctx is not None:
                node._ctx = None
                node.requires_grad = False
        self.nodes = []


def backward(loss: Tensor) -> None:
    """
    Populate .grad of every leaf that requires grad with dLoss/dLeaf

    Leaf gradients accumulate across calls. Detached tensors and leaves
    created with requires_grad=False silently receive nothing. The tape is
    consumed: intermediate results cannot be differentiated twice.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    tape = GradTape.record(loss)
    pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    for node in reversed(tape.nodes):
        grad = pending.pop(id(node), None)
        if grad is None:
            continue
        if node._ctx is None:
            node.grad = grad.copy() if node.grad is None else node.grad + grad
            continue
        parent_grads = node._ctx.backward(grad)
        for parent, parent_grad in zip(node._ctx.parents, parent_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + parent_grad
            else:
                pending[key] = parent_grad

    tape.consume()


def _check_same_shape(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape and b.ndim != 0:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _reduce_scalar(grad: np.ndarray, operand: np.ndarray) -> np.ndarray:
    if operand.ndim == 0:
        return np.asarray(grad.sum())
    return grad


class Add(Function):
    def forward(self, a, b):
        _check_same_shape("add", a, b)
        self.b = b
        return a + b

    def backward(self, grad):
        return grad, _reduce_scalar(grad, self.b)


class Sub(Function):
    def forward(self, a, b):
        _check_same_shape("sub", a, b)
        self.b = b
        return a - b

    def backward(self, grad):
        return grad, _reduce_scalar(-grad, self.b)


class Mul(Function):
    def forward(self, a, b):
        _check_same_shape("mul", a, b)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return grad * self.b, _reduce_scalar(grad * self.a, self.b)


class Scale(Function):
    def forward(self, x, factor: float = 1.0):
        self.factor = factor
        return x * factor

    def backward(self, grad):
        return (grad * self.factor,)


class Shift(Function):
    def forward(self, x, value: float = 0.0):
        return x + value

    def backward(self, grad):
        return (grad,)


class Sigmoid(Function):
    def forward(self, x):
        self.y = expit(x)
        return self.y

    def backward(self, grad):
        return (grad * self.y * (1.0 - self.y),)


class Silu(Function):
    def forward(self, x):
        self.x = x
        self.s = expit(x)
        return x * self.s

    def backward(self, grad):
        return (grad * (self.s * (1.0 + self.x * (1.0 - self.s))),)


class Abs(Function):
    def forward(self, x):
        self.sign = np.sign(x)
        return np.abs(x)

    def backward(self, grad):
        return (grad * self.sign,)


class Tanh(Function):
    def forward(self, x):
        self.y = np.tanh(x)
        return self.y

    def backward(self, grad):
        return (grad * (1.0 - self.y * self.y),)


class LeakyRelu(Function):
    def forward(self, x, slope: float = 0.2):
        self.slope_mask = np.where(x > 0, 1.0, slope)
        return x * self.slope_mask

    def backward(self, grad):
        return (grad * self.slope_mask,)


class Softplus(Function):
    """log(1 + exp(x)) evaluated without overflow"""

    def forward(self, x):
        self.x = x
        return np.logaddexp(0.0, x)

    def backward(self, grad):
        return (grad * expit(self.x),)


class Sum(Function):
    def forward(self, x):
        self.shape = x.shape
        return np.asarray(x.sum())

    def backward(self, grad):
        return (np.full(self.shape, np.asarray(grad).item()),)


class Mean(Function):
    def forward(self, x):
        self.shape = x.shape
        return np.asarray(x.mean())

    def backward(self, grad):
        return (np.full(self.shape, np.asarray(grad).item() / max(1, int(np.prod(self.shape)))),)


class MeanAxes(Function):
    def forward(self, x, axes: Tuple[int, ...] = ()):
        self.shape = x.shape
        self.axes = tuple(a % x.ndim for a in axes)
        self.count = int(np.prod([x.shape[a] for a in self.axes]))
        return x.mean(axis=self.axes)

    def backward(self, grad):
        expanded = np.expand_dims(grad, self.axes)
        return (np.broadcast_to(expanded, self.shape) / self.count,)


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim != 2 or b.ndim != 2:
            raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        return grad @ self.b.T, self.a.T @ grad


class Reshape(Function):
    def forward(self, x, shape: Tuple[int, ...] = ()):
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape)) != x.size:
            raise ShapeError(f"cannot reshape {x.shape} ({x.size} elements) to {shape}")
        self.source = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.source),)


class Permute(Function):
    def forward(self, x, axes: Tuple[int, ...] = ()):
        if sorted(axes) != list(range(x.ndim)):
            raise ShapeError(f"invalid permutation {axes} for {x.ndim}-D tensor")
        self.inverse = tuple(np.argsort(axes))
        return np.transpose(x, axes)

    def backward(self, grad):
        return (np.transpose(grad, self.inverse),)


class Expand(Function):
    """Repeat size-1 axes up to a target shape"""

    def forward(self, x, shape: Tuple[int, ...] = ()):
        shape = tuple(int(s) for s in shape)
        if len(shape) != x.ndim or any(s != t and s != 1 for s, t in zip(x.shape, shape)):
            raise ShapeError(f"cannot expand {x.shape} to {shape}")
        self.axes = tuple(i for i, (s, t) in enumerate(zip(x.shape, shape)) if s != t)
        return np.broadcast_to(x, shape).copy()

    def backward(self, grad):
        return (grad.sum(axis=self.axes, keepdims=True),)


class Concat(Function):
    def forward(self, *arrays, axis: int = 0):
        self.axis = axis
        self.bounds = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.bounds, axis=self.axis))


_ELEMENTWISE_UNARY = {
    "sigmoid": Sigmoid,
    "silu": Silu,
    "abs": Abs,
}


def elementwise(op: str, a: Tensor, b: Optional[Union[Tensor, float]] = None) -> Tensor:
    """
    Elementwise op dispatcher: add, sub, mul, scale, sigmoid, silu, abs

    Binary ops need equal shapes or a scalar b; scale takes a float b.
    """
    if op in _ELEMENTWISE_UNARY:
        return _ELEMENTWISE_UNARY[op].apply(a)
    if op == "scale":
        return Scale.apply(a, factor=float(b))
    if b is None:
        raise ShapeError(f"{op} needs a second operand")
    if not isinstance(b, Tensor):
        b = Tensor(b)
    if op == "add":
        return Add.apply(a, b)
    if op == "sub":
        return Sub.apply(a, b)
    if op == "mul":
        return Mul.apply(a, b)
    raise ValueError(f"Unknown elementwise op: {op}")


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def silu(x: Tensor) -> Tensor:
    return Silu.apply(x)


def tanh(x: Tensor) -> Tensor:
    return Tanh.apply(x)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    return LeakyRelu.apply(x, slope=slope)


def softplus(x: Tensor) -> Tensor:
    return Softplus.apply(x)


def absolute(x: Tensor) -> Tensor:
    return Abs.apply(x)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, b)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    return Permute.apply(x, axes=tuple(axes))


def reshape_permute(x: Tensor, shape: Optional[Sequence[int]] = None,
                    axes: Optional[Sequence[int]] = None) -> Tensor:
    """Permute axes (if given), then reshape (if given)"""
    if axes is not None:
        x = permute(x, axes)
    if shape is not None:
        x = reshape(x, shape)
    return x


def expand(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Expand.apply(x, shape=tuple(shape))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if len(tensors) == 1:
        return tensors[0]
    return Concat.apply(*tensors, axis=axis)


def total(x: Tensor) -> Tensor:
    return Sum.apply(x)


def mean(x: Tensor) -> Tensor:
    return Mean.apply(x)


def mean_axes(x: Tensor, axes: Sequence[int]) -> Tensor:
    return MeanAxes.apply(x, axes=tuple(axes))


def detach(x: Tensor) -> Tensor:
    """Same values, no link to the tape"""
    return x.detach()
