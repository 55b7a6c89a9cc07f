"""Reverse-mode autodiff on numpy arrays.

A `Tensor` wraps an ndarray and records, per operation, its parent tensors
plus a vector-Jacobian closure. Backward walks the recorded graph in reverse
topological order. VJP closures are themselves written with traced tensor
ops, so `grad_of(..., create_graph=True)` yields gradients that are again
differentiable -- this is what lets a gradient penalty regularize critic
parameters through a second backward pass.

Arrays stay in whatever float dtype they carry; casting a whole network to
float64 switches it into gradient-check precision.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""


class NonFiniteError(FloatingPointError):
    """Raised when a computation that must stay finite produces NaN/inf."""


_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class _GradMode:
    def __init__(self, enabled: bool):
        self.enabled = enabled

    def __enter__(self):
        self.prev = _grad_enabled()
        _state.grad_enabled = self.enabled
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self.prev
        return False


def no_grad() -> _GradMode:
    return _GradMode(False)


def enable_grad(enabled: bool = True) -> _GradMode:
    return _GradMode(enabled)


def _as_array(data, like: np.ndarray | None = None) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype not in (np.float32, np.float64):
        dtype = like.dtype if like is not None else np.float32
        arr = arr.astype(dtype)
    return arr


class Tensor:
    """N-dimensional array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad) and _grad_enabled()
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[Tensor], tuple] | None = None

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
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        req = ", requires_grad=True" if self.requires_grad else ""
        nm = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{req}{nm})"

    # operators
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_scalar(self, p)

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate gradients into ``.grad`` of every reachable leaf."""
        if grad is None:
            if self.size != 1:
                raise ShapeError("backward() without an explicit gradient needs a scalar output")
            seed = Tensor(np.ones_like(self.data))
        else:
            seed = Tensor(np.asarray(grad, dtype=self.data.dtype))
        grads = _backprop(self, seed, create_graph=False, targets=None)
        for t, g in grads.items():
            if t.grad is None:
                t.grad = g.data.copy()
            else:
                t.grad = t.grad + g.data


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(_as_array(x, like.data if like is not None else None))


def _make(data: np.ndarray, parents: Sequence[Tensor], vjp) -> Tensor:
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order over the subgraph that requires grad."""
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _backprop(root: Tensor, seed: Tensor, create_graph: bool,
              targets: Sequence[Tensor] | None) -> dict[Tensor, Tensor]:
    """Run reverse-mode through the graph below ``root``.

    Returns a map from tensor to gradient. With ``targets=None`` the map
    covers every requires-grad leaf; otherwise exactly the requested tensors
    (zeros when unreachable).
    """
    if not root.requires_grad:
        raise ValueError("output does not require grad; nothing to differentiate")
    order = _topo_order(root)
    target_ids = None if targets is None else {id(t) for t in targets}
    grads: dict[int, Tensor] = {id(root): seed}
    by_id: dict[int, Tensor] = {id(root): root}
    out: dict[Tensor, Tensor] = {}
    with enable_grad(create_graph):
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            is_leaf = node._vjp is None
            if is_leaf:
                if target_ids is None or id(node) in target_ids:
                    out[node] = g
                continue
            if target_ids is not None and id(node) in target_ids:
                out[node] = g
            parent_grads = node._vjp(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise ShapeError(
                        f"vjp produced gradient of shape {pg.shape} for parent of shape {parent.shape}")
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else add(prev, pg)
                by_id[id(parent)] = parent
    if targets is not None:
        result: dict[Tensor, Tensor] = {}
        for t in targets:
            result[t] = out.get(t, Tensor(np.zeros_like(t.data)))
        return result
    return out


def grad_of(output: Tensor, wrt: Sequence[Tensor], grad_output: Tensor | None = None,
            create_graph: bool = False) -> list[Tensor]:
    """Gradients of a scalar output with respect to ``wrt`` tensors.

    With ``create_graph=True`` the returned tensors stay connected to the
    graph, making higher-order derivatives possible.
    """
    if grad_output is None:
        if output.size != 1:
            raise ShapeError("grad_of needs a scalar output or an explicit grad_output")
        seed = Tensor(np.ones_like(output.data))
    else:
        seed = grad_output
    grads = _backprop(output, seed, create_graph=create_graph, targets=wrt)
    return [grads[t] for t in wrt]


# ---------------------------------------------------------------------------
# broadcasting helper (traced)

def _unbroadcast(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = sum_(g, axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ts) in enumerate(zip(g.shape, shape)) if ts == 1 and gs != 1)
    if axes:
        g = sum_(g, axis=axes, keepdims=True)
    if g.shape != shape:
        g = reshape(g, shape)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b, like=a if isinstance(a, Tensor) else None)
    try:
        data = a.data + b.data
    except ValueError as e:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from e

    def vjp(g: Tensor):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, (a, b), vjp)


def sub(a, b) -> Tensor:
    return add(a, neg(as_tensor(b)))


def neg(a) -> Tensor:
    a = as_tensor(a)

    def vjp(g: Tensor):
        return (neg(g),)

    return _make(-a.data, (a,), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b, like=a if isinstance(a, Tensor) else None)
    try:
        data = a.data * b.data
    except ValueError as e:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from e

    def vjp(g: Tensor):
        return _unbroadcast(mul(g, b), a.shape), _unbroadcast(mul(g, a), b.shape)

    return _make(data, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b, like=a if isinstance(a, Tensor) else None)
    try:
        data = a.data / b.data
    except ValueError as e:
        raise ShapeError(f"div: cannot broadcast {a.shape} with {b.shape}") from e

    def vjp(g: Tensor):
        ga = _unbroadcast(div(g, b), a.shape)
        gb = _unbroadcast(neg(div(mul(g, a), mul(b, b))), b.shape)
        return ga, gb

    return _make(data, (a, b), vjp)


def pow_scalar(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)

    def vjp(g: Tensor):
        return (mul(g, mul(pow_scalar(a, p - 1.0), p)),)

    return _make(a.data ** p, (a,), vjp)


def square(a) -> Tensor:
    a = as_tensor(a)
    return mul(a, a)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)
    out_const = Tensor(out_data)

    def vjp(g: Tensor):
        return (mul(g, out_const),)

    out = _make(out_data, (a,), vjp)
    return out


def log(a) -> Tensor:
    a = as_tensor(a)

    def vjp(g: Tensor):
        return (div(g, a),)

    return _make(np.log(a.data), (a,), vjp)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.sqrt(a.data)
    out_const = Tensor(out_data)

    def vjp(g: Tensor):
        return (div(mul(g, 0.5), out_const),)

    return _make(out_data, (a,), vjp)


def abs_(a) -> Tensor:
    a = as_tensor(a)

    def vjp(g: Tensor):
        return (mul(g, Tensor(np.sign(a.data))),)

    return _make(np.abs(a.data), (a,), vjp)


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    mask = ((a.data > lo) & (a.data < hi)).astype(a.data.dtype)

    def vjp(g: Tensor):
        return (mul(g, Tensor(mask)),)

    return _make(np.clip(a.data, lo, hi), (a,), vjp)


# ---------------------------------------------------------------------------
# activations

def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = (a.data > 0).astype(a.data.dtype)

    def vjp(g: Tensor):
        return (mul(g, Tensor(mask)),)

    return _make(a.data * mask, (a,), vjp)


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    factor = np.where(a.data > 0, 1.0, slope).astype(a.data.dtype)

    def vjp(g: Tensor):
        return (mul(g, Tensor(factor)),)

    return _make(a.data * factor, (a,), vjp)


def elu(a, alpha: float = 1.0) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    out_data = np.where(pos, a.data, alpha * np.expm1(a.data)).astype(a.data.dtype)
    # d/dx alpha*(e^x - 1) = out + alpha on the negative branch
    out_const = Tensor(out_data)
    mask = pos.astype(a.data.dtype)

    def vjp(g: Tensor):
        slope = add(Tensor(mask), mul(add(out_const, alpha), Tensor(1.0 - mask)))
        return (mul(g, slope),)

    return _make(out_data, (a,), vjp)


def tanh_(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)
    out_const = Tensor(out_data)

    def vjp(g: Tensor):
        return (mul(g, sub(1.0, mul(out_const, out_const))),)

    return _make(out_data, (a,), vjp)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))
    out_const = Tensor(out_data)

    def vjp(g: Tensor):
        return (mul(g, mul(out_const, sub(1.0, out_const))),)

    return _make(out_data, (a,), vjp)


def dropout(a, rate: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    """Inverted dropout: scales kept units by 1/keep at train time, identity at eval."""
    a = as_tensor(a)
    if not training or rate <= 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = 1.0 - rate
    mask = (rng.random(a.shape) < keep).astype(a.data.dtype) / keep
    return mul(a, Tensor(mask))


# ---------------------------------------------------------------------------
# shape ops

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    old = a.shape

    def vjp(g: Tensor):
        return (reshape(g, old),)

    try:
        data = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: cannot view {old} as {shape}") from e
    return _make(data, (a,), vjp)


def transpose2d(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose2d expects a matrix, got shape {a.shape}")

    def vjp(g: Tensor):
        return (transpose2d(g),)

    return _make(a.data.T.copy(), (a,), vjp)


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    old = a.shape

    def vjp(g: Tensor):
        return (_unbroadcast(g, old),)

    try:
        data = np.broadcast_to(a.data, shape).copy()
    except ValueError as e:
        raise ShapeError(f"broadcast_to: cannot broadcast {old} to {shape}") from e
    return _make(data, (a,), vjp)


def concat(parts: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ValueError("concat of zero tensors")
    sizes = [p.shape[axis] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def vjp(g: Tensor):
        return tuple(narrow(g, axis, int(offsets[i]), sizes[i]) for i in range(len(parts)))

    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: incompatible shapes {[p.shape for p in parts]}") from e
    return _make(data, tuple(parts), vjp)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    a = as_tensor(a)
    total = a.shape[axis]
    if start < 0 or start + length > total:
        raise ShapeError(f"narrow: [{start}, {start + length}) outside axis of size {total}")
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)

    def vjp(g: Tensor):
        return (pad_zeros(g, axis, start, total - start - length),)

    return _make(a.data[tuple(idx)].copy(), (a,), vjp)


def pad_zeros(a, axis: int, before: int, after: int) -> Tensor:
    a = as_tensor(a)
    widths = [(0, 0)] * a.ndim
    widths[axis] = (before, after)
    length = a.shape[axis]

    def vjp(g: Tensor):
        return (narrow(g, axis, before, length),)

    return _make(np.pad(a.data, widths), (a,), vjp)


# ---------------------------------------------------------------------------
# reductions

def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    if axis is None:
        axes = tuple(range(a.ndim))
    elif isinstance(axis, int):
        axes = (axis % a.ndim,)
    else:
        axes = tuple(ax % a.ndim for ax in axis)

    def vjp(g: Tensor):
        if not keepdims:
            kept = [1 if i in axes else s for i, s in enumerate(old)]
            g = reshape(g, kept)
        return (broadcast_to(g, old),)

    return _make(a.data.sum(axis=axes, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    elif isinstance(axis, int):
        n = a.shape[axis % a.ndim]
    else:
        n = 1
        for ax in axis:
            n *= a.shape[ax % a.ndim]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def l1(a) -> Tensor:
    """Sum of absolute values."""
    return sum_(abs_(as_tensor(a)))


def l2_norm(a) -> Tensor:
    """Euclidean norm of the flattened tensor."""
    return sqrt(sum_(square(as_tensor(a))))


def batch_l2_norm(a) -> Tensor:
    """Per-sample Euclidean norm over all non-batch axes; returns shape (N,)."""
    a = as_tensor(a)
    axes = tuple(range(1, a.ndim))
    return sqrt(sum_(square(a), axis=axes))


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def vjp(g: Tensor):
        return matmul(g, transpose2d(b)), matmul(transpose2d(a), g)

    return _make(a.data @ b.data, (a, b), vjp)


# ---------------------------------------------------------------------------
# convolution family
#
# conv / conv_input / conv_weight are the three adjoints of one trilinear
# form; each one's VJP lands back inside the set, so the family is closed
# under differentiation to any order.

def _spatial_pad(x: np.ndarray, pad: int, nsp: int) -> np.ndarray:
    if pad == 0:
        return x
    widths = [(0, 0)] * (x.ndim - nsp) + [(pad, pad)] * nsp
    return np.pad(x, widths)


def _conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - k
    if span < 0 or span % stride != 0:
        raise ShapeError(
            f"conv: spatial size {size} with kernel {k}, stride {stride}, pad {pad} does not tile exactly")
    return span // stride + 1


_CONV_SPEC = {
    # nsp -> (forward einsum, weight-grad einsum, input-grad einsum)
    2: ("nchwij,kcij->nkhw", "nchwij,nkhw->kcij", "nkhwij,kcij->nchw"),
    3: ("ncdhwijl,kcijl->nkdhw", "ncdhwijl,nkdhw->kcijl", "nkdhwijl,kcijl->ncdhw"),
}


def _win(xp: np.ndarray, ksize: tuple[int, ...], stride: int, nsp: int) -> np.ndarray:
    axes = tuple(range(2, 2 + nsp))
    view = sliding_window_view(xp, ksize, axis=axes)
    sub = (slice(None), slice(None)) + (slice(None, None, stride),) * nsp
    return view[sub]


def _conv_nd_data(x: np.ndarray, w: np.ndarray, stride: int, pad: int, nsp: int) -> np.ndarray:
    ksize = w.shape[2:]
    for s, k in zip(x.shape[2:], ksize):
        _conv_out_size(s, k, stride, pad)
    xp = _spatial_pad(x, pad, nsp)
    view = _win(xp, ksize, stride, nsp)
    return np.einsum(_CONV_SPEC[nsp][0], view, w, optimize=True)


def _conv_weight_data(x: np.ndarray, g: np.ndarray, stride: int, pad: int,
                      ksize: tuple[int, ...], nsp: int) -> np.ndarray:
    xp = _spatial_pad(x, pad, nsp)
    view = _win(xp, ksize, stride, nsp)
    return np.einsum(_CONV_SPEC[nsp][1], view, g, optimize=True)


def _conv_input_data(g: np.ndarray, w: np.ndarray, stride: int, pad: int,
                     in_spatial: tuple[int, ...], nsp: int) -> np.ndarray:
    ksize = w.shape[2:]
    n, kout = g.shape[:2]
    if any(k - 1 - pad < 0 for k in ksize):
        raise ShapeError(f"conv adjoint requires pad <= kernel-1, got pad={pad}, kernel={ksize}")
    stuffed_shape = (n, kout) + tuple((s - 1) * stride + 1 for s in g.shape[2:])
    gs = np.zeros(stuffed_shape, dtype=g.dtype)
    sub = (slice(None), slice(None)) + (slice(None, None, stride),) * nsp
    gs[sub] = g
    widths = [(0, 0), (0, 0)] + [(k - 1 - pad, k - 1 - pad) for k in ksize]
    gp = np.pad(gs, widths)
    flip = (slice(None), slice(None)) + (slice(None, None, -1),) * nsp
    view = _win(gp, ksize, 1, nsp)
    out = np.einsum(_CONV_SPEC[nsp][2], view, w[flip], optimize=True)
    if out.shape[2:] != tuple(in_spatial):
        raise ShapeError(f"conv adjoint produced spatial {out.shape[2:]}, expected {tuple(in_spatial)}")
    return out


def _check_conv_args(x: Tensor, w: Tensor, nsp: int) -> None:
    if x.ndim != nsp + 2 or w.ndim != nsp + 2:
        raise ShapeError(f"conv{nsp}d expects {nsp + 2}-d input/weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv{nsp}d: input has {x.shape[1]} channels, weight expects {w.shape[1]}")


def _conv_nd(x, w, stride: int, pad: int, nsp: int) -> Tensor:
    x, w = as_tensor(x), as_tensor(w)
    _check_conv_args(x, w, nsp)
    in_spatial = x.shape[2:]

    def vjp(g: Tensor):
        gx = _conv_input(g, w, stride, pad, in_spatial, nsp)
        gw = _conv_weight(x, g, stride, pad, w.shape[2:], nsp)
        return gx, gw

    return _make(_conv_nd_data(x.data, w.data, stride, pad, nsp), (x, w), vjp)


def _conv_input(g, w, stride: int, pad: int, in_spatial: tuple[int, ...], nsp: int) -> Tensor:
    g, w = as_tensor(g), as_tensor(w)

    def vjp(c: Tensor):
        gg = _conv_nd(c, w, stride, pad, nsp)
        gw = _conv_weight(c, g, stride, pad, w.shape[2:], nsp)
        return gg, gw

    return _make(_conv_input_data(g.data, w.data, stride, pad, in_spatial, nsp), (g, w), vjp)


def _conv_weight(x, g, stride: int, pad: int, ksize: tuple[int, ...], nsp: int) -> Tensor:
    x, g = as_tensor(x), as_tensor(g)

    def vjp(c: Tensor):
        gx = _conv_input(g, c, stride, pad, x.shape[2:], nsp)
        gg = _conv_nd(x, c, stride, pad, nsp)
        return gx, gg

    return _make(_conv_weight_data(x.data, g.data, stride, pad, tuple(ksize), nsp), (x, g), vjp)


def conv2d(x, w, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation, NCHW layout, square stride/padding."""
    return _conv_nd(x, w, stride, pad, 2)


def conv3d(x, w, stride: int = 1, pad: int = 0) -> Tensor:
    return _conv_nd(x, w, stride, pad, 3)


def conv_transpose2d(x, w, stride: int = 1, pad: int = 0, out_spatial=None) -> Tensor:
    """Transposed convolution; weight layout (C_in, C_out, kh, kw) read as the adjoint."""
    x = as_tensor(x)
    if out_spatial is None:
        k = as_tensor(w).shape[2]
        out_spatial = tuple((s - 1) * stride + k - 2 * pad for s in x.shape[2:])
    return _conv_input(x, w, stride, pad, tuple(out_spatial), 2)


def conv_transpose3d(x, w, stride: int = 1, pad: int = 0, out_spatial=None) -> Tensor:
    x = as_tensor(x)
    if out_spatial is None:
        k = as_tensor(w).shape[2]
        out_spatial = tuple((s - 1) * stride + k - 2 * pad for s in x.shape[2:])
    return _conv_input(x, w, stride, pad, tuple(out_spatial), 3)


# ---------------------------------------------------------------------------
# resampling

def upsample_nearest(a, factor: int = 2) -> Tensor:
    a = as_tensor(a)
    nsp = a.ndim - 2
    if nsp not in (2, 3):
        raise ShapeError(f"upsample expects NCHW or NCDHW input, got {a.shape}")
    data = a.data
    for ax in range(2, 2 + nsp):
        data = np.repeat(data, factor, axis=ax)
    scale = float(factor ** nsp)

    def vjp(g: Tensor):
        return (mul(downsample_avg(g, factor), scale),)

    return _make(data, (a,), vjp)


def downsample_avg(a, factor: int = 2) -> Tensor:
    a = as_tensor(a)
    nsp = a.ndim - 2
    if nsp not in (2, 3):
        raise ShapeError(f"downsample expects NCHW or NCDHW input, got {a.shape}")
    if any(s % factor for s in a.shape[2:]):
        raise ShapeError(f"downsample: spatial extents {a.shape[2:]} not divisible by {factor}")
    n, c = a.shape[:2]
    tmp_shape: list[int] = [n, c]
    for s in a.shape[2:]:
        tmp_shape += [s // factor, factor]
    axes = tuple(3 + 2 * i for i in range(nsp))
    data = a.data.reshape(tmp_shape).mean(axis=axes)
    scale = 1.0 / float(factor ** nsp)

    def vjp(g: Tensor):
        return (mul(upsample_nearest(g, factor), scale),)

    return _make(data, (a,), vjp)


# ---------------------------------------------------------------------------
# normalization / feature blocks (compositions, so higher-order grads hold)

def pixel_norm(a, eps: float = 1e-8) -> Tensor:
    """Scale each pixel's channel vector to unit Euclidean norm."""
    a = as_tensor(a)
    sq = sum_(square(a), axis=1, keepdims=True)
    return mul(a, pow_scalar(add(sq, eps), -0.5))


def minibatch_stddev(a, eps: float = 1e-8) -> Tensor:
    """Append one channel holding the mean batch standard deviation."""
    a = as_tensor(a)
    if a.shape[0] < 1:
        raise ShapeError("minibatch_stddev needs a non-empty batch")
    mu = mean(a, axis=0, keepdims=True)
    var = mean(square(sub(a, mu)), axis=0, keepdims=True)
    sd = mean(sqrt(add(var, eps)))
    feat_shape = (a.shape[0], 1) + a.shape[2:]
    feat = broadcast_to(reshape(sd, (1,) * a.ndim), feat_shape)
    return concat([a, feat], axis=1)


class BatchNormState:
    """Running statistics for one batch-norm node."""

    def __init__(self, channels: int, dtype=np.float32):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.initialized = False


def batch_norm(a, gamma: Tensor, beta: Tensor, state: BatchNormState,
               training: bool = True, momentum: float = 0.9, eps: float = 1e-5) -> Tensor:
    a = as_tensor(a)
    c = a.shape[1]
    if gamma.size != c or beta.size != c:
        raise ShapeError(f"batch_norm: {c} channels but gamma/beta sized {gamma.size}/{beta.size}")
    param_shape = (1, c) + (1,) * (a.ndim - 2)
    axes = (0,) + tuple(range(2, a.ndim))
    if training:
        m = mean(a, axis=axes, keepdims=True)
        v = mean(square(sub(a, m)), axis=axes, keepdims=True)
        mn, vn = m.data.reshape(c), v.data.reshape(c)
        if state.initialized:
            state.running_mean = momentum * state.running_mean + (1 - momentum) * mn
            state.running_var = momentum * state.running_var + (1 - momentum) * vn
        else:
            state.running_mean, state.running_var = mn.copy(), vn.copy()
            state.initialized = True
    else:
        m = Tensor(state.running_mean.reshape(param_shape).astype(a.dtype))
        v = Tensor(state.running_var.reshape(param_shape).astype(a.dtype))
    xhat = mul(sub(a, m), pow_scalar(add(v, eps), -0.5))
    return add(mul(xhat, reshape(gamma, param_shape)), reshape(beta, param_shape))


def dense(x, w, b: Tensor | None = None) -> Tensor:
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def bias_add(x, b) -> Tensor:
    """Add a per-channel bias to an NC... tensor."""
    x, b = as_tensor(x), as_tensor(b)
    shape = (1, b.size) + (1,) * (x.ndim - 2)
    return add(x, reshape(b, shape))


# ---------------------------------------------------------------------------
# initializers

def he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
              dtype=np.float32) -> np.ndarray:
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


def check_finite(value: np.ndarray | Tensor, what: str) -> None:
    data = value.data if isinstance(value, Tensor) else value
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{what} contains non-finite values")
