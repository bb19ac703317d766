"""Minimal reverse-mode automatic differentiation on dense float64 arrays.

Tensors wrap numpy arrays; operations executed inside a ``Tape`` context are
recorded so that ``tape.backward(loss)`` can return d(loss)/d(tensor) for
every tensor that participates with ``requires_grad=True``. Outside a tape,
the same operations run as plain numpy computations.

The op set is intentionally small: exactly what a two-stream recurrent
sequence classifier needs (strided 1-d convolution, dense matmul, gated-cell
arithmetic, attention softmax, reductions) plus the structural ops (reshape,
slice, stack, transpose) required to wire them together.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operands have incompatible shapes for an op."""


class NumericError(ArithmeticError):
    """Raised when a non-finite value enters or leaves an op."""


def _all_finite(a: np.ndarray) -> bool:
    if a.size == 0:
        return True
    # min/max propagate NaN and expose +/-inf; avoids a bool temp the size of a.
    return bool(np.isfinite(a.min()) and np.isfinite(a.max()))


class Tensor:
    """Dense row-major float64 array, optionally participating in gradients."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if arr.size == 0:
            raise ShapeError("tensors must be non-empty, got shape %r" % (arr.shape,))
        if not _all_finite(arr):
            raise NumericError("non-finite values in tensor%s" % (f" {name!r}" if name else ""))
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item() needs a scalar, got shape %r" % (self.shape,))
        return float(self.data.reshape(()))

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # Convenience arithmetic; canonical forms are the module-level ops.
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

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


_TAPES: list["Tape"] = []


class Tape:
    """Records operations in execution order for one backward pass.

    Ops append in the order they execute, so every node's inputs precede it;
    the reverse sweep in :meth:`backward` is therefore a valid topological
    order by construction (cycles cannot be recorded).
    """

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def __len__(self):
        return len(self._nodes)

    def _record(self, out, inputs, backward):
        self._nodes.append(_Node(out, inputs, backward))

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Return gradient buffers keyed by tensor identity.

        Tensors that require grad but lie off the path to ``loss`` simply have
        no entry; callers treat a missing entry as an all-zero gradient.
        """
        if loss.data.size != 1:
            raise ShapeError("backward() needs a scalar loss, got shape %r" % (loss.shape,))
        grads: dict[Tensor, np.ndarray] = {loss: np.ones_like(loss.data)}
        for node in reversed(self._nodes):
            gout = grads.get(node.out)
            if gout is None or not np.any(gout):
                continue
            gins = node.backward(gout)
            for t, g in zip(node.inputs, gins):
                if g is None or not t.requires_grad:
                    continue
                acc = grads.get(t)
                grads[t] = g if acc is None else acc + g
        return grads


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _result(data, inputs: tuple[Tensor, ...], backward) -> Tensor:
    """Wrap an op result, recording it when a tape is active and grads flow."""
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._record(out, inputs, backward)
    return out


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from None

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: cannot broadcast {a.shape} with {b.shape}") from None

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from None

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(data, (a, b), backward)


def power(x, exponent: float) -> Tensor:
    """x ** exponent for a constant exponent."""
    x = as_tensor(x)
    data = x.data ** exponent

    def backward(g):
        return (g * exponent * x.data ** (exponent - 1.0),)

    return _result(data, (x,), backward)


def log(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(x.data)

    def backward(g):
        return (g / x.data,)

    return _result(data, (x,), backward)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _result(data, (a, b), backward)


def conv1d(x, w, stride: int = 1, padding: str = "same") -> Tensor:
    """Strided 1-d convolution (cross-correlation) over the time axis.

    ``x``: (N, length, in_channels) or (length, in_channels);
    ``w``: (filter_width, in_channels, out_channels).
    ``same`` zero-pads so the output length is ceil(length / stride);
    ``valid`` gives floor((length - filter_width) / stride) + 1.
    """
    x, w = as_tensor(x), as_tensor(w)
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d: need (N, len, Cin) and (K, Cin, Cout), got {x.shape}, {w.shape}")
    n, length, cin = xd.shape
    k, wcin, cout = w.shape
    if wcin != cin:
        raise ShapeError(f"conv1d: input has {cin} channels but filter expects {wcin}")
    if padding == "same":
        out_len = -(-length // stride)
        total = max((out_len - 1) * stride + k - length, 0)
        pl = total // 2
        xp = np.pad(xd, ((0, 0), (pl, total - pl), (0, 0)))
    elif padding == "valid":
        if length < k:
            raise ShapeError(f"conv1d: length {length} shorter than filter width {k}")
        out_len = (length - k) // stride + 1
        pl = 0
        xp = xd
    else:
        raise ValueError(f"conv1d: unknown padding {padding!r}")

    # im2col: (N, out_len, K, Cin) against w flattened to (K*Cin, Cout)
    wins = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)[:, ::stride][:, :out_len]
    cols = wins.transpose(0, 1, 3, 2).reshape(n * out_len, k * cin)
    wm = w.data.reshape(k * cin, cout)
    data = (cols @ wm).reshape(n, out_len, cout)

    def backward(g):
        gf = g.reshape(n * out_len, cout)
        gw = (cols.T @ gf).reshape(k, cin, cout)
        gcols = (gf @ wm.T).reshape(n, out_len, k, cin)
        gxp = np.zeros_like(xp)
        pos = stride * np.arange(out_len)
        for j in range(k):
            gxp[:, pos + j, :] += gcols[:, :, j, :]
        gx = gxp[:, pl:pl + length, :]
        return gx[0] if squeeze else gx, gw

    out = _result(data, (x, w), backward)
    if squeeze:
        return reshape(out, (out_len, cout)) if out.requires_grad else Tensor(data[0])
    return out


# ---------------------------------------------------------------------------
# activations


def tanh(x) -> Tensor:
    x = as_tensor(x)
    data = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - data * data),)

    return _result(data, (x,), backward)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    z = np.exp(-np.abs(x.data))
    data = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))

    def backward(g):
        return (g * data * (1.0 - data),)

    return _result(data, (x,), backward)


def prelu(x, slope) -> Tensor:
    """Parametric rectifier: x where x > 0, slope * x elsewhere.

    ``slope`` broadcasts against x (typically one slope per trailing channel).
    """
    x, slope = as_tensor(x), as_tensor(slope)
    pos = x.data > 0
    data = np.where(pos, x.data, slope.data * x.data)

    def backward(g):
        gx = g * np.where(pos, 1.0, slope.data)
        gs = _unbroadcast(g * np.where(pos, 0.0, x.data), slope.shape)
        return gx, gs

    return _result(data, (x, slope), backward)


def softmax(x) -> Tensor:
    """Softmax along the last axis; rows sum to one."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (data * (g - (g * data).sum(axis=-1, keepdims=True)),)

    return _result(data, (x,), backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale-shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = gain.data * xhat + bias.data

    def backward(g):
        gh = g * gain.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        red = tuple(range(g.ndim - 1))
        ggain = _unbroadcast((g * xhat).sum(axis=red) if red else g * xhat, gain.shape)
        gbias = _unbroadcast(g.sum(axis=red) if red else g, bias.shape)
        return gx, ggain, gbias

    return _result(data, (x, gain, bias), backward)


# ---------------------------------------------------------------------------
# reductions


def _reduce_backward(g, x_shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, x_shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, x_shape)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    data = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.size if axis is None else x.shape[axis]

    def backward(g):
        return (_reduce_backward(g, x.shape, axis, keepdims) / count,)

    return _result(data, (x,), backward)


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        return (np.ascontiguousarray(_reduce_backward(g, x.shape, axis, keepdims)),)

    return _result(data, (x,), backward)


# ---------------------------------------------------------------------------
# structural ops


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from None

    def backward(g):
        return (g.reshape(x.shape),)

    return _result(data, (x,), backward)


def flatten(x, start_axis: int = 0) -> Tensor:
    """Collapse all axes from ``start_axis`` onward into one."""
    x = as_tensor(x)
    head = x.shape[:start_axis]
    n = int(np.prod(x.shape[start_axis:], dtype=np.int64))
    return reshape(x, head + (n,))


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    data = np.ascontiguousarray(x.data.transpose(axes))
    inv = tuple(np.argsort(axes))

    def backward(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return _result(data, (x,), backward)


def slice_axis(x, axis: int, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    if not (0 <= start < stop <= x.shape[axis]):
        raise ShapeError(f"slice_axis: [{start}:{stop}] out of range for axis {axis} of {x.shape}")
    idx = tuple(slice(None) if a != axis else slice(start, stop) for a in range(x.ndim))
    data = np.ascontiguousarray(x.data[idx])

    def backward(g):
        gx = np.zeros(x.shape)
        gx[idx] = g
        return (gx,)

    return _result(data, (x,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat: mismatched shapes %r" % ([t.shape for t in tensors],)) from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _result(data, tensors, backward)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("stack: mismatched shapes %r" % ([t.shape for t in tensors],)) from None

    def backward(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(np.ascontiguousarray(moved[i]) for i in range(len(tensors)))

    return _result(data, tensors, backward)


# ---------------------------------------------------------------------------
# dropout


def dropout_mask(shape, rate: float, rng: np.random.Generator,
                 training: bool = True) -> Tensor:
    """Inverted-scaling dropout mask: 0 with probability ``rate``, else 1/(1-rate).

    Evaluation mode (``training=False``) returns the identity mask.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return Tensor(np.ones(shape))
    keep = (rng.random(shape) >= rate).astype(np.float64)
    return Tensor(keep / (1.0 - rate))


# Registry of every differentiable op exported by this module; gradient tests
# iterate it so nothing ships unchecked.
OPS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "power": power,
    "log": log,
    "matmul": matmul,
    "conv1d": conv1d,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "prelu": prelu,
    "softmax": softmax,
    "layer_norm": layer_norm,
    "mean": mean,
    "sum": tsum,
    "reshape": reshape,
    "flatten": flatten,
    "transpose": transpose,
    "slice_axis": slice_axis,
    "concat": concat,
    "stack": stack,
}


def apply_op(kind: str, *inputs, **attrs) -> Tensor:
    """Dispatch an op by registry name."""
    try:
        fn = OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}") from None
    return fn(*inputs, **attrs)
