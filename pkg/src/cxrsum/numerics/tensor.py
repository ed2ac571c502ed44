"""Dense float64 tensors with a reverse-mode gradient tape.

All arrays are row-major float64. Ops check their outputs for NaN/Inf so an
overflow surfaces as an error instead of propagating silently. Tensors are
immutable after creation; recording happens on an explicit Tape so independent
forward passes never share state.
"""

from __future__ import annotations

import math

import numpy as np

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
GELU_CUBIC = 0.044715
LAYER_NORM_EPS = 1e-12


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(ValueError):
    """Raised when an op is called outside its contract (e.g. non-scalar loss)."""


class Tensor:
    """Immutable dense tensor; ``node_id`` links it into a Tape when non-None."""

    __slots__ = ("array", "tape", "node_id")

    def __init__(self, array: np.ndarray, tape: "Tape | None" = None, node_id: int | None = None):
        arr = np.asarray(array, dtype=np.float64)
        if arr.size == 0:
            raise ShapeError(f"zero-size tensor not allowed (shape {arr.shape})")
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.array = arr
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the values."""
        return self.array.reshape(-1)

    def item(self) -> float:
        if self.array.size != 1:
            raise ContractError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.array.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, tracked={self.node_id is not None})"


def constant(array) -> Tensor:
    """Tensor that never receives a gradient."""
    return Tensor(np.asarray(array, dtype=np.float64))


class Tape:
    """Ordered record of operations for one forward pass.

    Inputs of every record were created before the record itself, so a single
    reverse sweep propagates all gradients; each node is visited exactly once.
    """

    def __init__(self):
        self._n_nodes = 0
        self._records: list[tuple[int, tuple[int, ...], object]] = []
        self._leaf_ids: list[tuple[int, tuple[int, ...]]] = []

    def _new_node(self) -> int:
        nid = self._n_nodes
        self._n_nodes += 1
        return nid

    def leaf(self, array) -> Tensor:
        """Register an input/parameter tensor that should receive a gradient."""
        t = Tensor(array, tape=self, node_id=self._new_node())
        self._leaf_ids.append((t.node_id, t.shape))
        return t

    def record(self, out_array: np.ndarray, inputs: tuple[Tensor, ...], backward, op_name: str) -> Tensor:
        if not np.isfinite(out_array).all():
            raise FloatingPointError(f"{op_name} produced non-finite values")
        out = Tensor(out_array, tape=self, node_id=self._new_node())
        in_ids = tuple(t.node_id if t.tape is self else -1 for t in inputs)
        self._records.append((out.node_id, in_ids, backward))
        return out

    def gradients(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Reverse sweep from a scalar loss; returns node_id -> gradient array.

        Every registered leaf gets an entry; leaves unreachable from the loss
        get zeros.
        """
        if loss.tape is not self or loss.node_id is None:
            raise ContractError("loss tensor is not recorded on this tape")
        if loss.array.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.array)}
        for out_id, in_ids, backward in reversed(self._records):
            gout = grads.pop(out_id, None)
            if gout is None:
                continue
            for in_id, g in zip(in_ids, backward(gout)):
                if in_id < 0 or g is None:
                    continue
                acc = grads.get(in_id)
                # never accumulate in place: backward rules may alias gout
                grads[in_id] = g if acc is None else acc + g
        result: dict[int, np.ndarray] = {}
        for leaf_id, shape in self._leaf_ids:
            g = grads.get(leaf_id)
            result[leaf_id] = g if g is not None else np.zeros(shape)
        return result


def _tape_of(*tensors: Tensor) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ContractError("operands recorded on different tapes")
            tape = t.tape
    return tape


def _emit(tape: Tape | None, out_array: np.ndarray, inputs: tuple[Tensor, ...], backward_builder, op_name: str) -> Tensor:
    if tape is None:
        if not np.isfinite(out_array).all():
            raise FloatingPointError(f"{op_name} produced non-finite values")
        return Tensor(out_array)
    return tape.record(out_array, inputs, backward_builder(), op_name)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    tape = _tape_of(a, b)
    try:
        out = a.array + b.array
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from None

    def build():
        sa, sb = a.shape, b.shape
        return lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))

    return _emit(tape, out, (a, b), build, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    tape = _tape_of(a, b)
    try:
        out = a.array * b.array
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from None

    def build():
        aa, ba = a.array, b.array
        sa, sb = a.shape, b.shape
        return lambda g: (_unbroadcast(g * ba, sa), _unbroadcast(g * aa, sb))

    return _emit(tape, out, (a, b), build, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.array.ndim != 2 or b.array.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    tape = _tape_of(a, b)
    out = a.array @ b.array

    def build():
        aa, ba = a.array, b.array
        return lambda g: (g @ ba.T, aa.T @ g)

    return _emit(tape, out, (a, b), build, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.array.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    out = np.ascontiguousarray(a.array.T)

    def build():
        return lambda g: (np.ascontiguousarray(g.T),)

    return _emit(_tape_of(a), out, (a,), build, "transpose")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = a.array.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    out = np.ascontiguousarray(out)

    def build():
        orig = a.shape
        return lambda g: (g.reshape(orig),)

    return _emit(_tape_of(a), out, (a,), build, "reshape")


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat of an empty list")
    tape = _tape_of(*tensors)
    try:
        out = np.concatenate([t.array for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from None

    def build():
        sizes = [t.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]

        def backward(g):
            return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

        return backward

    return _emit(tape, out, tuple(tensors), build, "concat")


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    n = a.shape[axis]
    if not (0 <= start < stop <= n):
        raise ShapeError(f"slice [{start}:{stop}] out of range for axis {axis} of shape {a.shape}")
    index = [slice(None)] * a.array.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = np.ascontiguousarray(a.array[index])

    def build():
        shape = a.shape

        def backward(g):
            full = np.zeros(shape)
            full[index] = g
            return (full,)

        return backward

    return _emit(_tape_of(a), out, (a,), build, "slice")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    ndim = x.array.ndim
    if not (-ndim <= axis < ndim):
        raise ShapeError(f"softmax: axis {axis} invalid for shape {x.shape}")
    shifted = x.array - x.array.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def build():
        y = out

        def backward(g):
            dot = (g * y).sum(axis=axis, keepdims=True)
            return (y * (g - dot),)

        return backward

    return _emit(_tape_of(x), out, (x,), build, "softmax")


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximation GELU."""
    xa = x.array
    inner = SQRT_2_OVER_PI * (xa + GELU_CUBIC * xa**3)
    t = np.tanh(inner)
    out = 0.5 * xa * (1.0 + t)

    def build():
        def backward(g):
            dinner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * xa**2)
            dx = 0.5 * (1.0 + t) + 0.5 * xa * (1.0 - t**2) * dinner
            return (g * dx,)

        return backward

    return _emit(_tape_of(x), out, (x,), build, "gelu")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias must have shape ({d},), got {gain.shape}/{bias.shape}")
    tape = _tape_of(x, gain, bias)
    mu = x.array.mean(axis=-1, keepdims=True)
    centered = x.array - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = centered * inv
    out = xhat * gain.array + bias.array

    def build():
        ga = gain.array

        def backward(g):
            dxhat = g * ga
            dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
            axes = tuple(range(g.ndim - 1))
            dgain = (g * xhat).sum(axis=axes)
            dbias = g.sum(axis=axes)
            return (dx, dgain, dbias)

        return backward

    return _emit(tape, out, (x, gain, bias), build, "layer_norm")


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table``; gradient scatter-adds back into the table."""
    idx = np.asarray(ids, dtype=np.intp)
    if idx.ndim != 1 or idx.size == 0:
        raise ShapeError("embedding_lookup expects a non-empty 1-D id list")
    if table.array.ndim != 2:
        raise ShapeError(f"embedding_lookup table must be a matrix, got shape {table.shape}")
    n = table.shape[0]
    if idx.min() < 0 or idx.max() >= n:
        raise IndexError(f"embedding id out of range [0, {n})")
    out = table.array[idx]

    def build():
        shape = table.shape

        def backward(g):
            gt = np.zeros(shape)
            np.add.at(gt, idx, g)
            return (gt,)

        return backward

    return _emit(_tape_of(table), out, (table,), build, "embedding_lookup")


def cross_entropy(logits: Tensor, targets, pad_id: int) -> Tensor:
    """Mean negative log-likelihood over non-pad target positions.

    Positions whose target equals ``pad_id`` contribute nothing to the value or
    the gradient.
    """
    tgt = np.asarray(targets, dtype=np.intp)
    if logits.array.ndim != 2 or tgt.ndim != 1 or tgt.shape[0] != logits.shape[0]:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs {tgt.shape[0]} targets")
    n_pos, vocab = logits.shape
    mask = tgt != pad_id
    live = tgt[mask]
    if live.size and (live.min() < 0 or live.max() >= vocab):
        raise IndexError(f"target id out of range [0, {vocab})")
    n_live = int(mask.sum())

    la = logits.array
    m = la.max(axis=1, keepdims=True)
    e = np.exp(la - m)
    z = e.sum(axis=1, keepdims=True)
    log_probs = la - m - np.log(z)
    if n_live == 0:
        per_pos = np.zeros(n_pos)
    else:
        per_pos = np.where(mask, -log_probs[np.arange(n_pos), np.where(mask, tgt, 0)], 0.0)
    out = np.asarray(per_pos.sum() / max(n_live, 1))

    def build():
        probs = e / z

        def backward(g):
            if n_live == 0:
                return (np.zeros_like(la),)
            gl = probs * mask[:, None]
            gl[np.arange(n_pos)[mask], tgt[mask]] -= 1.0
            gl *= float(g) / n_live
            return (gl,)

        return backward

    return _emit(_tape_of(logits), out, (logits,), build, "cross_entropy")


def backward(loss: Tensor) -> dict[int, Tensor]:
    """Gradients of a scalar recorded loss for every leaf on its tape.

    Leaves the loss does not depend on get zero gradients.
    """
    if loss.tape is None:
        raise ContractError("loss is not on a tape")
    return {nid: Tensor(g) for nid, g in loss.tape.gradients(loss).items()}
