"""Dense float arrays with reverse-mode automatic differentiation.

Only the operations the models in this package need are provided: 2-d
matrix products, broadcast elementwise arithmetic and activations, axis
reductions, zero-padded strided 2-d convolution, nearest-neighbour
upsampling, feature batch normalization, reshape and transpose.

Every operation that sees a gradient-tracking input records a node
holding its inputs and a backward rule.  ``backward(loss)`` replays the
recorded graph once, in reverse topological order, accumulating into
the ``grad`` field of every tracking tensor; afterwards the graph is
consumed and cannot be replayed.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError, NumericDomainError, ParameterError

_FLOAT_DTYPES = (np.float32, np.float64)


def _as_float_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in _FLOAT_DTYPES:
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """A numpy array plus an optional gradient and a graph link.

    Tensors are immutable values once created; only ``backward`` writes
    to them (the ``grad`` field).  ``data`` is always float32 or
    float64, row-major.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_float_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None
        self._consumed = False

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _from_op(cls, data, parents, backward_fn) -> "Tensor":
        out = cls(data)
        tracked = tuple(p for p in parents if p.requires_grad)
        if tracked:
            out.requires_grad = True
            out._parents = tracked
            out._backward_fn = backward_fn
        return out

    def detach(self) -> "Tensor":
        """A non-tracking tensor sharing this tensor's data."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._parents = ()
        out._backward_fn = None
        out._consumed = False
        return out

    # -- basic introspection ---------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        grad = ", grad" if self.grad is not None else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{grad})"

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, like=self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_coerce(other, like=self), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self, axis=None):
        return reduce_sum(self, axis)

    def mean(self, axis=None):
        return reduce_mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes if axes else None)


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.dtype, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcasting expanded."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- binary arithmetic ----------------------------------------------------


def _binary(a, b, forward, da, db, name):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else _coerce(b, like=a)
    try:
        with np.errstate(all="ignore"):
            out_data = forward(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} do not broadcast") from exc

    def backward_fn(out):
        g = out.grad
        _accumulate(a, _unbroadcast(da(g, a.data, b.data), a.shape))
        _accumulate(b, _unbroadcast(db(g, a.data, b.data), b.shape))

    return Tensor._from_op(out_data, (a, b), backward_fn)


def add(a, b) -> Tensor:
    return _binary(a, b, np.add, lambda g, x, y: g, lambda g, x, y: g, "add")


def sub(a, b) -> Tensor:
    return _binary(a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g, "sub")


def mul(a, b) -> Tensor:
    return _binary(a, b, np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x, "mul")


def div(a, b) -> Tensor:
    out = _binary(
        a, b, np.divide,
        lambda g, x, y: g / y,
        lambda g, x, y: -g * x / (y * y),
        "div",
    )
    if not np.all(np.isfinite(out.data)):
        raise NumericDomainError("div produced non-finite values")
    return out


def matmul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions disagree for {a.shape} and {b.shape}")
    out_data = a.data @ b.data

    def backward_fn(out):
        g = out.grad
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return Tensor._from_op(out_data, (a, b), backward_fn)


# -- elementwise functions -------------------------------------------------


def _unary(x, forward, dx, check_finite=False, name=""):
    x = x if isinstance(x, Tensor) else Tensor(x)
    with np.errstate(all="ignore"):
        out_data = forward(x.data)
    if check_finite and not np.all(np.isfinite(out_data)):
        raise NumericDomainError(f"{name} produced non-finite values")

    def backward_fn(out):
        _accumulate(x, dx(out.grad, x.data, out.data))

    return Tensor._from_op(out_data, (x,), backward_fn)


def exp(x) -> Tensor:
    return _unary(x, np.exp, lambda g, xd, od: g * od, check_finite=True, name="exp")


def log(x) -> Tensor:
    return _unary(x, np.log, lambda g, xd, od: g / xd, check_finite=True, name="log")


def relu(x) -> Tensor:
    return _unary(x, lambda v: np.maximum(v, 0.0), lambda g, xd, od: g * (xd > 0))


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    slope = float(slope)
    return _unary(
        x,
        lambda v: np.where(v > 0, v, slope * v),
        lambda g, xd, od: g * np.where(xd > 0, 1.0, slope),
    )


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # evaluated on the sign-split form to avoid overflow in exp
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x) -> Tensor:
    return _unary(x, _sigmoid, lambda g, xd, od: g * od * (1.0 - od))


def tanh(x) -> Tensor:
    return _unary(x, np.tanh, lambda g, xd, od: g * (1.0 - od * od))


def square(x) -> Tensor:
    return _unary(x, np.square, lambda g, xd, od: g * 2.0 * xd)


def absolute(x) -> Tensor:
    return _unary(x, np.abs, lambda g, xd, od: g * np.sign(xd))


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only where no clamping occurred."""
    lo, hi = float(lo), float(hi)
    return _unary(
        x,
        lambda v: np.clip(v, lo, hi),
        lambda g, xd, od: g * ((xd >= lo) & (xd <= hi)),
    )


# -- reductions -------------------------------------------------------------


def _normalize_axes(axis, ndim: int):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    norm = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"axis {ax} invalid for a {ndim}-d tensor")
        norm.append(ax % ndim)
    if len(set(norm)) != len(norm):
        raise DimensionError(f"duplicate axes in {axes}")
    return tuple(sorted(norm))


def _reduce(x, axis, mean: bool):
    x = x if isinstance(x, Tensor) else Tensor(x)
    axes = _normalize_axes(axis, x.ndim)
    op = np.mean if mean else np.sum
    out_data = op(x.data, axis=axes)
    if axes is None:
        count = x.size
    else:
        count = int(np.prod([x.shape[a] for a in axes])) if axes else 1

    def backward_fn(out):
        g = out.grad
        if axes is None:
            expanded = np.broadcast_to(g, x.shape)
        else:
            g = np.expand_dims(g, axes)
            expanded = np.broadcast_to(g, x.shape)
        _accumulate(x, expanded / count if mean else expanded)

    return Tensor._from_op(out_data, (x,), backward_fn)


def reduce_sum(x, axis=None) -> Tensor:
    return _reduce(x, axis, mean=False)


def reduce_mean(x, axis=None) -> Tensor:
    return _reduce(x, axis, mean=True)


# -- shape manipulation ------------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    try:
        out_data = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}") from exc

    def backward_fn(out):
        _accumulate(x, out.grad.reshape(x.shape))

    return Tensor._from_op(out_data, (x,), backward_fn)


def transpose(x, axes=None) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    if axes is not None and sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"transpose axes {axes} invalid for shape {x.shape}")
    out_data = np.transpose(x.data, axes)
    inverse = None if axes is None else tuple(np.argsort(axes))

    def backward_fn(out):
        _accumulate(x, np.transpose(out.grad, inverse))

    return Tensor._from_op(out_data, (x,), backward_fn)


# -- structured operations ---------------------------------------------------


def conv2d(x, kernel, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate a B x C_in x H x W input with a C_out x C_in x k x k kernel.

    Zero padding; output extent (H + 2*padding - k) / stride + 1 must be
    an integer.  Gradients are computed for both input and kernel.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    kernel = kernel if isinstance(kernel, Tensor) else Tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    batch, c_in, height, width = x.shape
    c_out, kc_in, kh, kw = kernel.shape
    if kc_in != c_in:
        raise DimensionError(f"conv2d: input channels {c_in} != kernel channels {kc_in}")
    if kh != kw:
        raise DimensionError(f"conv2d supports square kernels only, got {kh}x{kw}")
    stride, padding = int(stride), int(padding)
    if stride < 1:
        raise ParameterError(f"conv2d stride must be >= 1, got {stride}")
    if padding < 0:
        raise ParameterError(f"conv2d padding must be >= 0, got {padding}")
    k = kh
    if k > height + 2 * padding or k > width + 2 * padding:
        raise DimensionError(f"kernel {k}x{k} exceeds padded input {height + 2 * padding}x{width + 2 * padding}")
    if (height + 2 * padding - k) % stride or (width + 2 * padding - k) % stride:
        raise DimensionError(
            f"conv2d: non-integer output extent for input {height}x{width}, "
            f"kernel {k}, stride {stride}, padding {padding}"
        )
    out_h = (height + 2 * padding - k) // stride + 1
    out_w = (width + 2 * padding - k) // stride + 1

    if padding:
        padded = np.zeros((batch, c_in, height + 2 * padding, width + 2 * padding), dtype=x.dtype)
        padded[:, :, padding:padding + height, padding:padding + width] = x.data
    else:
        padded = x.data

    def patches_of(arr):
        windows = np.lib.stride_tricks.sliding_window_view(arr, (k, k), axis=(2, 3))
        windows = windows[:, :, ::stride, ::stride]
        # (B, C_in, H', W', k, k) -> (B*H'*W', C_in*k*k)
        return windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * out_h * out_w, c_in * k * k)

    kernel2d = kernel.data.reshape(c_out, c_in * k * k)
    out2d = patches_of(padded) @ kernel2d.T
    out_data = out2d.reshape(batch, out_h, out_w, c_out).transpose(0, 3, 1, 2)

    def backward_fn(out):
        g2d = out.grad.transpose(0, 2, 3, 1).reshape(batch * out_h * out_w, c_out)
        if kernel.requires_grad:
            dk = (g2d.T @ patches_of(padded)).reshape(kernel.shape)
            _accumulate(kernel, dk)
        if x.requires_grad:
            dpatch = (g2d @ kernel2d).reshape(batch, out_h, out_w, c_in, k, k)
            dpadded = np.zeros_like(padded)
            for ki in range(k):
                for kj in range(k):
                    dpadded[:, :, ki:ki + stride * out_h:stride, kj:kj + stride * out_w:stride] += \
                        dpatch[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
            if padding:
                dpadded = dpadded[:, :, padding:padding + height, padding:padding + width]
            _accumulate(x, dpadded)

    return Tensor._from_op(out_data, (x, kernel), backward_fn)


def upsample_nearest(x, factor: int) -> Tensor:
    """Replicate each pixel of a B x C x H x W tensor into a factor x factor block."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"upsample_nearest expects 4-d input, got {x.shape}")
    factor = int(factor)
    if factor < 1:
        raise ParameterError(f"upsample factor must be >= 1, got {factor}")
    batch, channels, height, width = x.shape
    out_data = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def backward_fn(out):
        g = out.grad.reshape(batch, channels, height, factor, width, factor)
        _accumulate(x, g.sum(axis=(3, 5)))

    return Tensor._from_op(out_data, (x,), backward_fn)


def batch_norm(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize each feature column of a B x F tensor.

    Training mode normalizes by the batch statistics (variance
    stabilized by ``eps``) and updates the running statistics in place
    by exponential moving average; eval mode uses the running
    statistics.  Running buffers are plain arrays, not tracked.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    gamma = gamma if isinstance(gamma, Tensor) else Tensor(gamma)
    beta = beta if isinstance(beta, Tensor) else Tensor(beta)
    if x.ndim != 2:
        raise DimensionError(f"batch_norm expects a 2-d input, got {x.shape}")
    batch, features = x.shape
    for name, t in (("gamma", gamma), ("beta", beta)):
        if t.shape != (features,):
            raise DimensionError(f"batch_norm {name} shape {t.shape} != ({features},)")

    if training:
        if batch < 2:
            raise ParameterError(f"batch_norm needs a batch of >= 2 in training mode, got {batch}")
        mean = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mean) * inv_std
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * (batch / (batch - 1))  # unbiased for eval
    else:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean) * inv_std
    out_data = gamma.data * xhat + beta.data

    def backward_fn(out):
        g = out.grad
        _accumulate(gamma, (g * xhat).sum(axis=0))
        _accumulate(beta, g.sum(axis=0))
        if not x.requires_grad:
            return
        if training:
            dxhat = g * gamma.data
            # gradient through the batch statistics
            dx = (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0)) * inv_std
        else:
            dx = g * gamma.data * inv_std
        _accumulate(x, dx)

    return Tensor._from_op(out_data, (x, gamma, beta), backward_fn)


# -- the backward pass --------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate grads of every tracking tensor reachable from ``loss``.

    The loss must be scalar.  The recorded graph is consumed: a second
    backward through any node visited here raises ContractError.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise ContractError("backward called on an already-consumed graph")
    if not loss.requires_grad:
        return

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node._consumed:
            raise ContractError("backward reached a node from an already-consumed graph")
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward_fn is not None:
            # interior op node: run its rule once, then retire it
            node._backward_fn(node)
            node._backward_fn = None
            node._parents = ()
            node._consumed = True
