"""Dense tensors with a recorded reverse-mode graph.

Every op that touches a tensor with ``requires_grad`` records its parents and a
backward closure on the result. :func:`backward` linearises that recording into
a tape (reverse topological order) and pulls gradients back to the requested
parameters. Only first-order derivatives are supported.
"""

from __future__ import annotations

import contextlib
from collections import OrderedDict
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

_GRAD_ENABLED = True


class TensorError(ValueError):
    """Shape, rank or dtype problem detected by a tensor op."""


class GraphError(RuntimeError):
    """Backward requested on something that has no recorded graph."""


class NonFiniteError(FloatingPointError):
    """A forward or backward value became NaN or infinite."""

    def __init__(self, where: str):
        super().__init__(f"non-finite value in {where}")
        self.where = where


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (inference, target networks)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """N-d float array plus the bookkeeping needed for reverse mode."""

    __slots__ = ("data", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64 if dtype is None else dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    # operator sugar; the implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)


def _not_scalar(t: Tensor):
    raise TensorError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def record(out: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap ``out`` and attach ``backward_fn`` if any parent needs a gradient."""
    t = Tensor(out)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._backward = backward_fn
    return t


class NetworkParams:
    """Named parameter tensors of one unit plus its architecture descriptor."""

    def __init__(self, entries: Mapping[str, Tensor] | Iterable[tuple[str, Tensor]], arch: dict):
        self.entries: OrderedDict[str, Tensor] = OrderedDict()
        for name, t in (entries.items() if isinstance(entries, Mapping) else entries):
            if name in self.entries:
                raise TensorError(f"duplicate parameter name {name!r}")
            t.name = name
            t.requires_grad = True
            self.entries[name] = t
        self.arch = arch

    def __getitem__(self, name: str) -> Tensor:
        return self.entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def items(self):
        return self.entries.items()

    def names(self) -> list[str]:
        return list(self.entries)

    def count(self) -> int:
        return int(sum(t.data.size for t in self.entries.values()))

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams(
            [(k, Tensor(v.data.astype(dtype))) for k, v in self.entries.items()], dict(self.arch)
        )

    def copy(self) -> "NetworkParams":
        return NetworkParams([(k, Tensor(v.data.copy())) for k, v in self.entries.items()], dict(self.arch))

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        """Overwrite values in place (shape-checked first, so failure leaves params untouched)."""
        for k, t in self.entries.items():
            if k not in arrays:
                raise TensorError(f"missing parameter {k!r}")
            if tuple(arrays[k].shape) != t.shape:
                raise TensorError(f"parameter {k!r}: expected shape {t.shape}, got {tuple(arrays[k].shape)}")
        for k, t in self.entries.items():
            t.data = np.array(arrays[k], dtype=t.dtype)


GradStore = dict  # name -> np.ndarray, same shapes as the parameters


def backward(loss: Tensor, params: NetworkParams | Mapping[str, Tensor] | None = None) -> GradStore:
    """Reverse-mode sweep from a scalar ``loss``.

    Returns a mapping ``name -> gradient`` for every entry of ``params``;
    parameters the loss does not reach get zeros.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    entries = params.entries if isinstance(params, NetworkParams) else (params or {})
    if loss._backward is None and not any(loss is t for t in entries.values()):
        raise GraphError("loss has no recorded graph (computed under no_grad or from constants)")

    tape = _tape(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
        if node is not loss and node._parents:
            # interior nodes are not needed once propagated
            del grads[id(node)]

    out = GradStore()
    for name, t in entries.items():
        g = grads.get(id(t))
        out[name] = np.zeros_like(t.data) if g is None else np.asarray(g, dtype=t.dtype).reshape(t.shape)
    return out


def _tape(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def check_finite(t: Tensor | np.ndarray, where: str) -> None:
    arr = t.data if isinstance(t, Tensor) else t
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(where)
