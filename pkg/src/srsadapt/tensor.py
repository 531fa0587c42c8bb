"""Dense float64 tensors with tape-based reverse-mode autodiff.

A ``Tape`` records every operation whose inputs track gradients, in
execution order, which for eager evaluation is already a topological
order.  ``Tape.backward`` walks the record in reverse and accumulates
gradients into each tracked input, summing across all consumers.

Single-threaded by design: one tape per training step, owned by one run.
"""

from __future__ import annotations

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class EmptyLossError(ValueError):
    """Raised when a loss is requested over an empty position set."""


class Tensor:
    """A dense float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "track_grad", "name")

    def __init__(self, data, track_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.track_grad = track_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"<Tensor{label} shape={self.data.shape} track_grad={self.track_grad}>"

    # Operator sugar; the functional forms below do the real work.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, mul_scalar(_as_tensor(other), -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


class _Node:
    __slots__ = ("output", "backward")

    def __init__(self, output: Tensor, backward):
        self.output = output
        self.backward = backward


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered operation record for one forward/backward pass."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tapes must unwind in LIFO order"

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)/d(loss)=1 and propagate through the record in reverse."""
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self._nodes):
            grad = node.output.grad
            if grad is None:
                continue
            node.backward(grad)


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(inputs: tuple[Tensor, ...], out_data: np.ndarray, backward) -> Tensor:
    tape = _active_tape()
    tracked = tape is not None and any(t.track_grad for t in inputs)
    out = Tensor(out_data, track_grad=tracked)
    if tracked:
        tape._nodes.append(_Node(out, backward))
    return out


def _accumulate(t: Tensor, grad: np.ndarray, own: bool = False) -> None:
    """Add ``grad`` into ``t.grad``.

    ``own=True`` promises the buffer is freshly allocated by the caller and
    not handed to anyone else, letting the first accumulation skip a copy.
    """
    if not t.track_grad:
        return
    if t.grad is None:
        t.grad = grad if own else np.array(grad, dtype=np.float64)
    else:
        t.grad += grad


def clear_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


def _unbroadcast_flag(grad: np.ndarray, shape: tuple[int, ...]) -> tuple[np.ndarray, bool]:
    """Sum ``grad`` down to ``shape``; the flag says whether a fresh buffer
    was allocated (i.e. any reduction happened)."""
    fresh = False
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
        fresh = True
    squeeze = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if squeeze:
        grad = grad.sum(axis=squeeze, keepdims=True)
        fresh = True
    return grad.reshape(shape), fresh


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    return _unbroadcast_flag(grad, shape)[0]


# ---------------------------------------------------------------------------
# elementwise and linear algebra
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def backward(grad):
        ga, own_a = _unbroadcast_flag(grad, a.data.shape)
        _accumulate(a, ga, own=own_a)
        gb, own_b = _unbroadcast_flag(grad, b.data.shape)
        _accumulate(b, gb, own=own_b)

    return _record((a, b), out, backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def backward(grad):
        _accumulate(a, _unbroadcast(grad * b.data, a.data.shape), own=True)
        _accumulate(b, _unbroadcast(grad * a.data, b.data.shape), own=True)

    return _record((a, b), out, backward)


def mul_scalar(a: Tensor, c: float) -> Tensor:
    out = a.data * c

    def backward(grad):
        _accumulate(a, grad * c, own=True)

    return _record((a,), out, backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(
            f"matmul needs 2-D or batched operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}"
        )
    out = np.matmul(a.data, b.data)

    def backward(grad):
        da = np.matmul(grad, b.data.swapaxes(-1, -2))
        db = np.matmul(a.data.swapaxes(-1, -2), grad)
        _accumulate(a, _unbroadcast(da, a.data.shape), own=True)
        _accumulate(b, _unbroadcast(db, b.data.shape), own=True)

    return _record((a, b), out, backward)


def gelu(x: Tensor) -> Tensor:
    flat = np.ascontiguousarray(x.data.reshape(-1))
    out_flat, cdf = kernels.gelu_forward(flat)
    out = out_flat.reshape(x.data.shape)

    def backward(grad):
        g = np.ascontiguousarray(grad.reshape(-1))
        dx = kernels.gelu_backward(flat, cdf, g)
        _accumulate(x, dx.reshape(x.data.shape), own=True)

    return _record((x,), out, backward)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def backward(grad):
        _accumulate(x, grad.reshape(x.data.shape))

    return _record((x,), out, backward)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out = np.transpose(x.data, axes)
    inverse = tuple(np.argsort(axes))

    def backward(grad):
        _accumulate(x, np.transpose(grad, inverse))

    return _record((x,), out, backward)


def select_position(x: Tensor, position: int) -> Tensor:
    """Pick one sequence position from a (B, T, H) tensor -> (B, H)."""
    if x.data.ndim != 3:
        raise ShapeError(f"select_position expects (B, T, H), got {x.data.shape}")
    out = x.data[:, position, :].copy()

    def backward(grad):
        full = np.zeros_like(x.data)
        full[:, position, :] = grad
        _accumulate(x, full, own=True)

    return _record((x,), out, backward)


def take_rows(x: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows of a 2-D tensor; backward scatter-adds them back."""
    if x.data.ndim != 2:
        raise ShapeError(f"take_rows expects a 2-D tensor, got {x.data.shape}")
    indices = np.asarray(indices, dtype=np.int64)
    n = x.data.shape[0]
    if indices.size and (indices.min() < 0 or indices.max() >= n):
        raise ShapeError(f"row index out of range [0, {n})")
    out = x.data[indices]

    def backward(grad):
        full = np.zeros_like(x.data)
        kernels.embedding_scatter_add(full, indices, np.ascontiguousarray(grad))
        _accumulate(x, full, own=True)

    return _record((x,), out, backward)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def tsum(x: Tensor, axis=None) -> Tensor:
    out = x.data.sum(axis=axis)

    def backward(grad):
        if axis is None:
            _accumulate(x, np.broadcast_to(grad, x.data.shape).copy(), own=True)
        else:
            _accumulate(
                x, np.broadcast_to(np.expand_dims(grad, axis), x.data.shape).copy(), own=True
            )

    return _record((x,), out, backward)


def tmean(x: Tensor, axis=None) -> Tensor:
    if axis is None:
        count = x.data.size
    else:
        count = x.data.shape[axis]
    return mul_scalar(tsum(x, axis=axis), 1.0 / count)


# ---------------------------------------------------------------------------
# neural-network specific operations
# ---------------------------------------------------------------------------


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of ``table`` by integer id; backward scatter-adds."""
    ids = np.asarray(ids, dtype=np.int64)
    vocab_size = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise ShapeError(
            f"embedding id out of range [0, {vocab_size}): "
            f"min={ids.min()}, max={ids.max()}"
        )
    out = table.data[ids]

    def backward(grad):
        if not table.track_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        width = table.data.shape[1]
        kernels.embedding_scatter_add(
            table.grad,
            np.ascontiguousarray(ids.reshape(-1)),
            np.ascontiguousarray(grad.reshape(-1, width)),
        )

    return _record((table,), out, backward)


def softmax(x: Tensor, additive_bias: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis.

    ``additive_bias`` is a constant (non-differentiated) array broadcast
    onto the logits before normalization, e.g. a padding mask of -1e30.
    """
    width = x.data.shape[-1]
    logits = x.data if additive_bias is None else x.data + additive_bias
    flat = np.ascontiguousarray(logits.reshape(-1, width))
    probs = kernels.softmax_rows(flat)
    out = probs.reshape(x.data.shape)

    def backward(grad):
        g = np.ascontiguousarray(grad.reshape(-1, width))
        dx = kernels.softmax_backward_rows(probs, g)
        _accumulate(x, dx.reshape(x.data.shape), own=True)

    return _record((x,), out, backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean / unit variance, then affine."""
    width = x.data.shape[-1]
    if gain.data.shape != (width,) or bias.data.shape != (width,):
        raise ShapeError(
            f"layer_norm affine shapes {gain.data.shape}/{bias.data.shape} "
            f"do not match last axis {width}"
        )
    flat = np.ascontiguousarray(x.data.reshape(-1, width))
    out2d, mean, rstd = kernels.layer_norm_forward(flat, gain.data, bias.data, eps)
    out = out2d.reshape(x.data.shape)

    def backward(grad):
        g = np.ascontiguousarray(grad.reshape(-1, width))
        dx, dgain, dbias = kernels.layer_norm_backward(flat, gain.data, mean, rstd, g)
        _accumulate(x, dx.reshape(x.data.shape), own=True)
        _accumulate(gain, dgain, own=True)
        _accumulate(bias, dbias, own=True)

    return _record((x, gain, bias), out, backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not training or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    scale = (rng.random(x.data.shape) >= p) / (1.0 - p)
    out = x.data * scale

    def backward(grad):
        _accumulate(x, grad * scale, own=True)

    return _record((x,), out, backward)


_NO_IGNORE = -(2**31)


def softmax_cross_entropy(
    logits: Tensor, targets: np.ndarray, ignore_index: int | None = None
) -> Tensor:
    """Mean negative log-softmax over positions whose target is not ignored."""
    if logits.data.ndim != 2:
        raise ShapeError(f"expected (N, C) logits, got {logits.data.shape}")
    n, c = logits.data.shape
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if targets.shape[0] != n:
        raise ShapeError(f"{n} logit rows but {targets.shape[0]} targets")
    sentinel = _NO_IGNORE if ignore_index is None else int(ignore_index)
    valid = targets != sentinel
    bad = valid & ((targets < 0) | (targets >= c))
    if bad.any():
        raise ShapeError(
            f"target {targets[bad][0]} outside [0, {c}) and not the ignore index"
        )
    if not valid.any():
        raise EmptyLossError("empty loss set: every target equals the ignore index")

    flat = np.ascontiguousarray(logits.data)
    loss_sum, n_valid, probs = kernels.cross_entropy_forward(flat, targets, sentinel)
    out = np.float64(loss_sum / n_valid)

    def backward(grad):
        d = kernels.cross_entropy_backward(probs, targets, sentinel, n_valid, float(grad))
        _accumulate(logits, d, own=True)

    return _record((logits,), out, backward)
