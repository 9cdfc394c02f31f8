"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap numpy arrays (float32 by default, float64 for oracle tests).
Operations record themselves on the active :class:`Tape`; ``backward``
replays the tape in reverse and accumulates gradients into every tensor
that requires them. There is no implicit broadcasting except where an
operation documents it (attention masks, row-wise bias add); everything
else demands explicit reshapes, which keeps the correctness surface small.

Every forward op validates that its output is finite and aborts with
:class:`NonFiniteError` otherwise, so NaN/Inf never propagates silently.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

# Additive mask value. exp(-1e9 - x) underflows to exactly 0.0 for any
# realistic score x, so masked attention weights are exact zeros while the
# tensor itself stays finite.
NEG_INF = -1.0e9

_FLOAT_DTYPES = (np.float32, np.float64)


class NonFiniteError(ValueError):
    """A forward operation produced (or received) NaN/Inf values."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class Tensor:
    """Shape-tagged numeric array with optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def grad_array(self) -> np.ndarray:
        """Gradient buffer, or zeros when this tensor is off the loss path."""
        if self.grad is None:
            return np.zeros_like(self.data)
        return self.grad

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"


_tape_stack = threading.local()


def _stack() -> list:
    if not hasattr(_tape_stack, "tapes"):
        _tape_stack.tapes = []
    return _tape_stack.tapes


class Tape:
    """Ordered record of operations; inputs of every op precede it.

    Use as a context manager around forward computation, then call
    :func:`backward` with the resulting scalar loss. Tapes are
    single-threaded; independent tapes may live on separate threads.
    """

    def __init__(self):
        # (output, inputs, backward_fn); backward_fn maps the output
        # gradient to one gradient array (or None) per input.
        self.ops: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _stack().pop()
        assert popped is self, "tapes must nest"


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


def _check_finite(arr: np.ndarray, op: str, role: str = "output") -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op}: non-finite values in {role} tensor")


def _emit(op: str, out_data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    _check_finite(out_data, op)
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.ops.append((out, inputs, backward_fn))
    return out


def _same_shape(op: str, x: Tensor, y: Tensor) -> None:
    if x.shape != y.shape:
        raise ShapeError(f"{op}: shapes {x.shape} and {y.shape} differ (explicit reshape required)")
    if x.dtype != y.dtype:
        raise ShapeError(f"{op}: dtypes {x.dtype} and {y.dtype} differ")


def constant(data, dtype=None) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=False, dtype=dtype)


def parameter(data, dtype=None) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True, dtype=dtype)


# ---------------------------------------------------------------------------
# elementwise / arithmetic


def add(x: Tensor, y: Tensor) -> Tensor:
    _same_shape("add", x, y)
    return _emit("add", x.data + y.data, (x, y), lambda g: (g, g))


def sub(x: Tensor, y: Tensor) -> Tensor:
    _same_shape("sub", x, y)
    return _emit("sub", x.data - y.data, (x, y), lambda g: (g, -g))


def mul(x: Tensor, y: Tensor) -> Tensor:
    _same_shape("mul", x, y)
    xd, yd = x.data, y.data
    return _emit("mul", xd * yd, (x, y), lambda g: (g * yd, g * xd))


def neg(x: Tensor) -> Tensor:
    return _emit("neg", -x.data, (x,), lambda g: (-g,))


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    return _emit("scale", x.data * s, (x,), lambda g: (g * s,))


def shift(x: Tensor, c: float) -> Tensor:
    return _emit("shift", x.data + float(c), (x,), lambda g: (g,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-wise bias add: x[..., d] + b[d]. The one sanctioned broadcast
    besides attention masks."""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: bias {b.shape} does not match last axis of {x.shape}")

    def backward(g):
        gb = g.reshape(-1, b.shape[0]).sum(axis=0)
        return g, gb

    return _emit("add_bias", x.data + b.data, (x, b), backward)


def relu(x: Tensor) -> Tensor:
    keep = x.data > 0
    return _emit("relu", np.where(keep, x.data, 0.0), (x,), lambda g: (g * keep,))


def exp(x: Tensor) -> Tensor:
    out_data = np.exp(x.data)
    return _emit("exp", out_data, (x,), lambda g: (g * out_data,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return _emit("log", np.log(xd), (x,), lambda g: (g / xd,))


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    in_shape = x.shape
    return _emit("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(in_shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(a) for a in axes)
    inv = tuple(np.argsort(axes))
    return _emit("transpose", np.ascontiguousarray(x.data.transpose(axes)), (x,),
                 lambda g: (g.transpose(inv),))


def pad_time(x: Tensor, left: int, right: int) -> Tensor:
    """Zero-pad a (B, T, D) tensor along the time axis."""
    if x.ndim != 3:
        raise ShapeError(f"pad_time: expected 3-D tensor, got {x.shape}")
    out_data = np.pad(x.data, ((0, 0), (left, right), (0, 0)))
    t_in = x.shape[1]
    return _emit("pad_time", out_data, (x,), lambda g: (g[:, left:left + t_in, :],))


# ---------------------------------------------------------------------------
# reductions


def sum_all(x: Tensor) -> Tensor:
    in_shape = x.shape
    return _emit("sum_all", np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                 lambda g: (np.full(in_shape, g, dtype=g.dtype),))


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    in_shape = x.shape
    return _emit("mean_all", np.asarray(x.data.mean(), dtype=x.dtype), (x,),
                 lambda g: (np.full(in_shape, g / n, dtype=g.dtype),))


def sum_axis(x: Tensor, axis: int) -> Tensor:
    axis = axis % x.ndim
    in_shape = x.shape

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis), in_shape).copy(),)

    return _emit("sum_axis", x.data.sum(axis=axis), (x,), backward)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(x: Tensor, y: Tensor) -> Tensor:
    """Matrix product.

    Supported operand layouts:
      * 2-D @ 2-D
      * N-D @ 2-D   (projection applied to the last axis)
      * N-D @ N-D   (batched; leading dimensions must match exactly)
    """
    xd, yd = x.data, y.data
    if x.dtype != y.dtype:
        raise ShapeError(f"matmul: dtypes {x.dtype} and {y.dtype} differ")
    if xd.ndim >= 2 and yd.ndim == 2:
        if xd.shape[-1] != yd.shape[0]:
            raise ShapeError(f"matmul: inner dims {xd.shape} @ {yd.shape}")

        def backward(g):
            gx = g @ yd.T
            lead = tuple(range(xd.ndim - 1))
            gy = np.tensordot(xd, g, axes=(lead, lead))
            return gx, gy

        return _emit("matmul", xd @ yd, (x, y), backward)

    if xd.ndim == yd.ndim and xd.ndim >= 3:
        if xd.shape[:-2] != yd.shape[:-2] or xd.shape[-1] != yd.shape[-2]:
            raise ShapeError(f"matmul: batched shapes {xd.shape} @ {yd.shape}")

        def backward(g):
            gx = g @ yd.swapaxes(-1, -2)
            gy = xd.swapaxes(-1, -2) @ g
            return gx, gy

        return _emit("matmul", xd @ yd, (x, y), backward)

    raise ShapeError(f"matmul: unsupported operand ranks {xd.shape} @ {yd.shape}")


# ---------------------------------------------------------------------------
# indexing


def gather_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Select rows of a (N, d) table by an integer index array (embedding lookup)."""
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise ShapeError(f"gather_rows: table must be 2-D, got {table.shape}")

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _emit("gather_rows", table.data[ids], (table,), backward)


def gather_time(x: Tensor, idx: np.ndarray) -> Tensor:
    """Gather framed windows along the time axis.

    x: (B, T, D); idx: integer (T2, K) window index matrix.
    Returns (B, T2, K, D). Used to express strided convolutions as
    gather + reshape + matmul.
    """
    idx = np.asarray(idx)
    if x.ndim != 3 or idx.ndim != 2:
        raise ShapeError(f"gather_time: got x {x.shape}, idx {idx.shape}")
    b = x.shape[0]
    bidx = np.arange(b)[:, None, None]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (bidx, idx[None, :, :]), g)
        return (gx,)

    return _emit("gather_time", x.data[:, idx, :], (x,), backward)


def take_last(x: Tensor, idx: np.ndarray) -> Tensor:
    """Pick one element along the last axis per leading position.

    x: (..., V); idx: integer array of shape x.shape[:-1]. Returns that
    leading shape. Used to gather target log-probabilities.
    """
    idx = np.asarray(idx)
    if idx.shape != x.shape[:-1]:
        raise ShapeError(f"take_last: idx {idx.shape} does not match leading shape of {x.shape}")
    v = x.shape[-1]
    flat_rows = np.arange(idx.size)
    flat_idx = idx.reshape(-1)
    out_data = x.data.reshape(-1, v)[flat_rows, flat_idx].reshape(idx.shape)

    def backward(g):
        gx = np.zeros_like(x.data).reshape(-1, v)
        np.add.at(gx, (flat_rows, flat_idx), g.reshape(-1))
        return (gx.reshape(x.shape),)

    return _emit("take_last", out_data, (x,), backward)


# ---------------------------------------------------------------------------
# normalization / activation blocks


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax along ``axis``."""
    _check_finite(x.data, "softmax", "input")
    axis = axis % x.ndim
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        return ((g - dot) * out_data,)

    return _emit("softmax", out_data, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check_finite(x.data, "log_softmax", "input")
    axis = axis % x.ndim
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - log_z
    probs = np.exp(out_data)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _emit("log_softmax", out_data, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, epsilon: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then apply gain and bias."""
    d = x.shape[-1]
    if d == 0:
        raise ShapeError("layer_norm: zero-length rows")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + epsilon)
    xhat = (x.data - mu) * inv_std
    out_data = xhat * gain.data + bias.data

    def backward(g):
        dgain = (g * xhat).reshape(-1, d).sum(axis=0)
        dbias = g.reshape(-1, d).sum(axis=0)
        dxhat = g * gain.data
        dx = (dxhat - dxhat.mean(axis=-1, keepdims=True)
              - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)) * inv_std
        return dx, dgain, dbias

    return _emit("layer_norm", out_data, (x, gain, bias), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; call only in training mode."""
    if p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return _emit("dropout", x.data * keep, (x,), lambda g: (g * keep,))


def add_attn_mask(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Add NEG_INF to score positions where the boolean mask is False.

    ``mask`` must broadcast to the score shape; True means "may attend".
    """
    mask = np.asarray(mask, dtype=bool)
    try:
        np.broadcast_shapes(mask.shape, scores.shape)
    except ValueError as e:
        raise ShapeError(f"add_attn_mask: mask {mask.shape} vs scores {scores.shape}") from e
    penalty = np.where(mask, 0.0, NEG_INF).astype(scores.dtype)
    return _emit("add_attn_mask", scores.data + penalty, (scores,), lambda g: (g,))


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """softmax(Q Kᵀ / sqrt(d_k) [+ mask]) V with exact zero weight on masked keys.

    Operands are (..., T, d); any shared leading batch dimensions must match.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"scaled_dot_attention: query dim {q.shape} vs key dim {k.shape}")
    if k.shape[:-1] != v.shape[:-1]:
        raise ShapeError(f"scaled_dot_attention: key/value positions differ: {k.shape} vs {v.shape}")
    d_k = q.shape[-1]
    kt_axes = tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)
    scores = scale(matmul(q, transpose(k, kt_axes)), 1.0 / np.sqrt(d_k))
    if mask is not None:
        scores = add_attn_mask(scores, mask)
    return matmul(softmax(scores, axis=-1), v)


# ---------------------------------------------------------------------------
# backward pass


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into every requires_grad tensor on the tape.

    The tape is topologically ordered by construction, so one reverse sweep
    visits each recorded operation exactly once. Tensors that do not lie on
    a path to the loss end up with an explicit zero gradient.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    for out, inputs, backward_fn in reversed(tape.ops):
        if out.grad is None:
            continue
        partials = backward_fn(out.grad)
        for t, p in zip(inputs, partials):
            if p is None or not t.requires_grad:
                continue
            if t.grad is None:
                t.grad = np.array(p, dtype=t.dtype, copy=True)
            else:
                t.grad += p
    for out, inputs, _ in tape.ops:
        for t in (out, *inputs):
            if t.requires_grad and t.grad is None:
                t.grad = np.zeros_like(t.data)


# ---------------------------------------------------------------------------
# gradient verification


def grad_check(function: Callable[[Tensor], Tensor], point: Tensor, epsilon: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``function`` must map one tensor to a scalar tensor and be evaluable at
    perturbed points. The check runs in float64 regardless of the input dtype;
    relative error is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    x = Tensor(point.data.astype(np.float64).copy(), requires_grad=True)
    with Tape() as tape:
        out = function(x)
    if out.size != 1:
        raise ShapeError("grad_check: function must be scalar-valued")
    backward(tape, out)
    analytic = x.grad_array().copy()

    numeric = np.zeros_like(analytic)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        hi = function(Tensor(x.data.copy())).item()
        flat[i] = orig - epsilon
        lo = function(Tensor(x.data.copy())).item()
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NonFiniteError("grad_check: non-finite function evaluation")
        nflat[i] = (hi - lo) / (2.0 * epsilon)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def grad_check_params(loss_fn: Callable[[], Tensor], params: dict[str, Tensor],
                      epsilon: float = 1e-5, max_coords: int | None = None,
                      rng: np.random.Generator | None = None) -> float:
    """Central-difference check of d(loss)/d(param) for a dict of parameters.

    ``loss_fn`` closes over the parameters and rebuilds the loss on each
    call. When ``max_coords`` is set, at most that many coordinates per
    parameter are probed (chosen by ``rng``); otherwise all coordinates are.
    Returns the max relative error across all probed coordinates.
    """
    for p in params.values():
        p.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    backward(tape, loss)
    analytic = {name: p.grad_array().copy() for name, p in params.items()}

    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if max_coords is not None and n > max_coords:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(n, size=max_coords, replace=False)
        else:
            coords = range(n)
        a_flat = analytic[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + epsilon
            hi = loss_fn().item()
            flat[i] = orig - epsilon
            lo = loss_fn().item()
            flat[i] = orig
            num = (hi - lo) / (2.0 * epsilon)
            denom = max(abs(a_flat[i]), abs(num), 1e-8)
            worst = max(worst, abs(a_flat[i] - num) / denom)
    return worst
