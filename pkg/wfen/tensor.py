"""
Dense tensors with reverse-mode automatic differentiation

Contains:
- Tensor: numpy-backed array (order <= 4) that records the operation producing it
- Function: base class for differentiable operations (forward on arrays, backward on gradients)
- Elementwise, reduction and data-movement operations
- backward(): gradient map for a named parameter collection

Graphs are confined to one training step: backward() consumes the graph and
releases it, a second call on the same loss raises GraphError.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import einops
import numpy as np

from .errors import GraphError, NumericalError, ShapeError

MAX_ORDER = 4

_default_dtype = np.dtype(np.float32)
_grad_enabled = True
_kink_patterns: Optional[List[np.ndarray]] = None
_node_counter = itertools.count(1)

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[Any]]


def get_default_dtype() -> np.dtype:
    """Return the dtype used for newly created tensors"""
    return _default_dtype


def set_default_dtype(dtype: Any) -> None:
    """Set the dtype for newly created tensors (float32 or float64)"""
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"Unsupported tensor dtype: {dtype}")
    _default_dtype = dtype


@contextmanager
def float64_mode() -> Iterator[None]:
    """Create tensors in 64-bit precision inside the block (gradient checking)"""
    previous = _default_dtype
    set_default_dtype(np.float64)
    try:
        yield
    finally:
        set_default_dtype(previous)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block"""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextmanager
def record_kinks() -> Iterator[List[np.ndarray]]:
    """Collect the sign pattern of every relu and abs input evaluated inside the block"""
    global _kink_patterns
    previous = _kink_patterns
    _kink_patterns = []
    try:
        yield _kink_patterns
    finally:
        _kink_patterns = previous


class Function:
    """
    Base class for differentiable operations.

    Subclasses implement forward() on raw arrays and backward() returning one
    gradient (or None) per input tensor. Anything backward() needs is saved on
    the instance during forward().
    """

    def __init__(self, *tensors: "Tensor"):
        self.tensors = tensors

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__}.forward is not implemented")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"{type(self).__name__}.backward is not implemented")

    @classmethod
    def apply(cls, *tensors: "Tensor", **kwargs: Any) -> "Tensor":
        """
        Run the forward pass and, when any input requires gradients, record the node

        Args:
            *tensors: Input tensors
            **kwargs: Non-differentiable arguments for forward()

        Returns:
            Output tensor
        """
        func = cls(*tensors)
        out = func.forward(*(t.data for t in tensors), **kwargs)
        if not np.all(np.isfinite(out)):
            raise NumericalError(f"{cls.__name__} produced non-finite values")
        record = _grad_enabled and any(t.requires_grad for t in tensors)
        return Tensor._from_op(out, func if record else None)


class Tensor:
    """Dense real array participating in a reverse-mode differentiation graph"""

    __slots__ = ("data", "requires_grad", "_grad", "_creator", "node_id", "_released")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        dtype: Optional[Any] = None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=dtype if dtype is not None else _default_dtype)
        if arr.ndim > MAX_ORDER:
            raise ShapeError(f"Tensor order {arr.ndim} exceeds the maximum of {MAX_ORDER}")
        self.data = arr
        self.requires_grad = requires_grad
        self._grad: Optional[np.ndarray] = None
        self._creator: Optional[Function] = None
        self.node_id: Optional[int] = None
        self._released = False

    @classmethod
    def _from_op(cls, data: np.ndarray, creator: Optional[Function]) -> "Tensor":
        if data.ndim > MAX_ORDER:
            raise ShapeError(f"Tensor order {data.ndim} exceeds the maximum of {MAX_ORDER}")
        out = cls.__new__(cls)
        out.data = data
        out._grad = None
        out._released = False
        out._creator = creator
        out.requires_grad = creator is not None
        out.node_id = next(_node_counter) if creator is not None else None
        return out

    # ------------------------------------------------------------------
    # Properties
    # ------------------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def grad(self) -> Optional[np.ndarray]:
        return self._grad

    @property
    def is_leaf(self) -> bool:
        return self._creator is None

    def zero_grad(self) -> None:
        self._grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._from_op(self.data, None)

    def astype(self, dtype: Any) -> "Tensor":
        return Tensor(self.data, requires_grad=self.requires_grad, dtype=dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------------
    # Backward pass
    # ------------------------------------------------------------------

    def _accumulate(self, grad: np.ndarray) -> None:
        if self._grad is None:
            self._grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self._grad += grad

    def _collect_graph(self) -> List["Tensor"]:
        nodes: List[Tensor] = []
        seen = set()
        stack = [self]
        while stack:
            node = stack.pop()
            if id(node) in seen or node._creator is None:
                continue
            seen.add(id(node))
            nodes.append(node)
            for parent in node._creator.tensors:
                if parent.requires_grad and parent._creator is not None:
                    stack.append(parent)
        nodes.sort(key=lambda t: t.node_id, reverse=True)
        return nodes

    def backward(self) -> None:
        """
        Propagate the gradient of this scalar to every reachable grad-enabled leaf

        Leaves accumulate into .grad additively; the graph is released afterwards.
        """
        if self._released:
            raise GraphError("backward() called on a released graph; rerun the forward pass")
        if self.data.size != 1:
            raise GraphError(f"backward() requires a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise GraphError("Loss does not depend on any tensor that requires gradients")

        if self._creator is None:
            self._accumulate(np.ones_like(self.data))
            return

        nodes = self._collect_graph()
        pending: Dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}

        for node in nodes:
            grad = pending.pop(id(node), None)
            if grad is None:
                continue
            creator = node._creator
            input_grads = creator.backward(grad)
            if len(input_grads) != len(creator.tensors):
                raise GraphError(
                    f"{type(creator).__name__}.backward returned {len(input_grads)} "
                    f"gradients for {len(creator.tensors)} inputs"
                )
            for parent, g in zip(creator.tensors, input_grads):
                if g is None or not parent.requires_grad:
                    continue
                if g.shape != parent.shape:
                    raise GraphError(
                        f"{type(creator).__name__} produced gradient of shape {g.shape} "
                        f"for input of shape {parent.shape}"
                    )
                if parent._creator is None:
                    parent._accumulate(g)
                elif id(parent) in pending:
                    pending[id(parent)] = pending[id(parent)] + g
                else:
                    pending[id(parent)] = g

        for node in nodes:
            node._creator = None
            node._released = True
        self._released = True

    # ------------------------------------------------------------------
    # Operators
    # ------------------------------------------------------------------

    def __add__(self, other: ArrayLike) -> "Tensor":
        if isinstance(other, (int, float)):
            return AddScalar.apply(self, value=float(other))
        return Add.apply(self, _as_tensor(other))

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return self.__add__(other)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        if isinstance(other, (int, float)):
            return AddScalar.apply(self, value=-float(other))
        return Sub.apply(self, _as_tensor(other))

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return (-self).__add__(other)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        if isinstance(other, (int, float)):
            return ScalarMul.apply(self, value=float(other))
        return Mul.apply(self, _as_tensor(other))

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return self.__mul__(other)

    def __neg__(self) -> "Tensor":
        return ScalarMul.apply(self, value=-1.0)

    def relu(self) -> "Tensor":
        return Relu.apply(self)

    def abs(self) -> "Tensor":
        return Abs.apply(self)

    def sum(self) -> "Tensor":
        return Sum.apply(self)

    def mean(self) -> "Tensor":
        return Mean.apply(self)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=tuple(shape))

    def permute(self, *axes: int) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return Permute.apply(self, axes=tuple(axes))

    def transpose_last(self) -> "Tensor":
        """Swap the two trailing axes"""
        axes = list(range(self.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
        return Permute.apply(self, axes=tuple(axes))


def _as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _check_binary(name: str, x: np.ndarray, y: np.ndarray) -> None:
    if x.shape == y.shape or y.size == 1 or x.size == 1:
        return
    raise ShapeError(f"{name}: operand shapes {x.shape} and {y.shape} differ (no broadcasting)")


def _reduce_to(grad: np.ndarray, like: np.ndarray) -> np.ndarray:
    if grad.shape == like.shape:
        return grad
    return np.asarray(grad.sum(), dtype=grad.dtype).reshape(like.shape)


# ----------------------------------------------------------------------
# Elementwise operations
# ----------------------------------------------------------------------


class Add(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        _check_binary("add", x, y)
        self.x, self.y = x, y
        return x + y

    def backward(self, grad):
        return _reduce_to(grad, self.x), _reduce_to(grad, self.y)


class Sub(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        _check_binary("sub", x, y)
        self.x, self.y = x, y
        return x - y

    def backward(self, grad):
        return _reduce_to(grad, self.x), _reduce_to(-grad, self.y)


class Mul(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        _check_binary("mul", x, y)
        self.x, self.y = x, y
        return x * y

    def backward(self, grad):
        return _reduce_to(grad * self.y, self.x), _reduce_to(grad * self.x, self.y)


class AddScalar(Function):
    def forward(self, x: np.ndarray, value: float) -> np.ndarray:
        return x + x.dtype.type(value)

    def backward(self, grad):
        return (grad,)


class ScalarMul(Function):
    def forward(self, x: np.ndarray, value: float) -> np.ndarray:
        self.value = x.dtype.type(value)
        return x * self.value

    def backward(self, grad):
        return (grad * self.value,)


class Relu(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        # derivative at exactly zero is zero
        self.mask = x > 0
        if _kink_patterns is not None:
            _kink_patterns.append(self.mask)
        return np.where(self.mask, x, x.dtype.type(0))

    def backward(self, grad):
        return (grad * self.mask,)


class Abs(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.sign = np.sign(x)
        if _kink_patterns is not None:
            _kink_patterns.append(self.sign)
        return np.abs(x)

    def backward(self, grad):
        return (grad * self.sign,)


class Sum(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.shape = x.shape
        return np.asarray(x.sum(), dtype=x.dtype)

    def backward(self, grad):
        return (np.full(self.shape, grad.reshape(()), dtype=grad.dtype),)


class Mean(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.shape = x.shape
        self.count = x.size
        return np.asarray(x.sum() / x.dtype.type(x.size), dtype=x.dtype)

    def backward(self, grad):
        value = grad.reshape(()) / grad.dtype.type(self.count)
        return (np.full(self.shape, value, dtype=grad.dtype),)


# ----------------------------------------------------------------------
# Data movement
# ----------------------------------------------------------------------


class Reshape(Function):
    def forward(self, x: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
        if -1 not in shape and int(np.prod(shape)) != x.size:
            raise ShapeError(f"Cannot reshape {x.shape} ({x.size} elements) into {shape}")
        self.shape = x.shape
        try:
            return x.reshape(shape)
        except ValueError as e:
            raise ShapeError(f"Cannot reshape {x.shape} into {shape}: {e}") from e

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Permute(Function):
    def forward(self, x: np.ndarray, axes: Tuple[int, ...]) -> np.ndarray:
        if sorted(axes) != list(range(x.ndim)):
            raise ShapeError(f"Invalid permutation {axes} for tensor of order {x.ndim}")
        self.inverse = tuple(np.argsort(axes))
        return np.ascontiguousarray(np.transpose(x, axes))

    def backward(self, grad):
        return (np.ascontiguousarray(np.transpose(grad, self.inverse)),)


class Rearrange(Function):
    """einops rearrangement; axis lengths must pin down both directions"""

    def forward(self, x: np.ndarray, pattern: str, lengths: Dict[str, int]) -> np.ndarray:
        lhs, rhs = (side.strip() for side in pattern.split("->"))
        self.inverse = f"{rhs} -> {lhs}"
        self.lengths = lengths
        try:
            return np.ascontiguousarray(einops.rearrange(x, pattern, **lengths))
        except einops.EinopsError as e:
            raise ShapeError(f"Cannot rearrange {x.shape} with '{pattern}': {e}") from e

    def backward(self, grad):
        return (np.ascontiguousarray(einops.rearrange(grad, self.inverse, **self.lengths)),)


class Concat(Function):
    def forward(self, *arrays: np.ndarray, axis: int) -> np.ndarray:
        first = arrays[0]
        for arr in arrays[1:]:
            if arr.ndim != first.ndim or any(
                a != b for i, (a, b) in enumerate(zip(arr.shape, first.shape)) if i != axis
            ):
                raise ShapeError(
                    f"concat along axis {axis}: extents {arr.shape} and {first.shape} disagree"
                )
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.ascontiguousarray(g) for g in np.split(grad, self.splits, axis=self.axis))


class Slice(Function):
    def forward(self, x: np.ndarray, axis: int, start: int, stop: int) -> np.ndarray:
        self.shape = x.shape
        self.index = (slice(None),) * axis + (slice(start, stop),)
        return np.ascontiguousarray(x[self.index])

    def backward(self, grad):
        full = np.zeros(self.shape, dtype=grad.dtype)
        full[self.index] = grad
        return (full,)


class Roll(Function):
    def forward(self, x: np.ndarray, shift: int, axes: Tuple[int, ...]) -> np.ndarray:
        self.shift = shift
        self.axes = axes
        return np.roll(x, (shift,) * len(axes), axis=axes)

    def backward(self, grad):
        return (np.roll(grad, (-self.shift,) * len(self.axes), axis=self.axes),)


# ----------------------------------------------------------------------
# Functional entry points
# ----------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    return Relu.apply(x)


def add(x: Tensor, y: ArrayLike) -> Tensor:
    return x + y


def sub(x: Tensor, y: ArrayLike) -> Tensor:
    return x - y


def mul(x: Tensor, y: ArrayLike) -> Tensor:
    return x * y


def scalar_mul(x: Tensor, value: float) -> Tensor:
    return ScalarMul.apply(x, value=float(value))


def absolute(x: Tensor) -> Tensor:
    return Abs.apply(x)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    return Permute.apply(x, axes=tuple(axes))


def rearrange(x: Tensor, pattern: str, **lengths: int) -> Tensor:
    return Rearrange.apply(x, pattern=pattern, lengths=lengths)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    return Concat.apply(*tensors, axis=axis)


def split(x: Tensor, sizes: Sequence[int], axis: int = 0) -> List[Tensor]:
    """Split along an axis into consecutive pieces of the given extents"""
    if sum(sizes) != x.shape[axis]:
        raise ShapeError(
            f"split extents {list(sizes)} sum to {sum(sizes)}, axis {axis} has {x.shape[axis]}"
        )
    pieces = []
    start = 0
    for size in sizes:
        pieces.append(Slice.apply(x, axis=axis, start=start, stop=start + size))
        start += size
    return pieces


def roll2d(x: Tensor, shift: int) -> Tensor:
    """Circular shift of both spatial axes of a BCHW tensor"""
    if shift == 0:
        return x
    return Roll.apply(x, shift=shift, axes=(2, 3))


def backward(loss: Tensor, params: Mapping[str, Tensor]) -> Dict[str, Tensor]:
    """
    Run the backward pass and collect gradients by parameter name

    Args:
        loss: Scalar loss tensor
        params: Named parameters (e.g. a ParameterStore)

    Returns:
        Ordered map from parameter name to its gradient; parameters the loss
        does not reach receive exact zeros
    """
    loss.backward()
    grads: Dict[str, Tensor] = {}
    for name, param in params.items():
        g = param.grad if param.grad is not None else np.zeros_like(param.data)
        grads[name] = Tensor._from_op(g, None)
    return grads
