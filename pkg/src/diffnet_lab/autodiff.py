"""Minimal define-by-run reverse-mode autodiff over dense numpy arrays.

Operations executed inside an active :class:`Tape` are recorded when any
input requires a gradient; :meth:`Tape.backward` replays the record in
reverse and clears it. Outside a tape nothing is recorded (inference).

Only the primitives DiffNet needs are provided. There is no broadcasting;
shapes must match exactly. Image tensors are channels-last, (B, H, W, C).
Convolutions zero-pad; ``shift`` and the stencils replicate the boundary
(zero-Neumann).
"""

import numpy as np

from . import kernels

_active = []


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name")

    def __init__(self, value, requires_grad=False, name=None):
        self.value = np.asarray(value)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<{type(self).__name__}{label} shape={self.shape} dtype={self.dtype}>"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)


class Param(Tensor):
    """Named trainable array; ``grad`` accumulates until :meth:`zero_grad`."""

    __slots__ = ()

    def __init__(self, name, value):
        super().__init__(np.array(value), requires_grad=True, name=name)
        self.zero_grad()

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)


class Tape:
    def __init__(self):
        self.records = []

    def __enter__(self):
        _active.append(self)
        return self

    def __exit__(self, *exc):
        _active.remove(self)
        return False

    def record(self, out, inputs, backward_fn):
        self.records.append((out, inputs, backward_fn))

    def backward(self, loss):
        """Accumulate ``d loss / d x`` into ``x.grad`` for every leaf that requires it."""
        if loss.value.size != 1 or loss.value.ndim > 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self.records:
            raise ValueError("tape is empty")
        pending = {id(loss): np.ones_like(loss.value)}
        for out, inputs, fn in reversed(self.records):
            g = pending.pop(id(out), None)
            if g is None:
                continue
            for x, gx in zip(inputs, fn(g)):
                if gx is None or not x.requires_grad:
                    continue
                if _is_leaf(x):
                    if x.grad is None:
                        x.grad = np.zeros_like(x.value)
                    x.grad += gx
                elif id(x) in pending:
                    pending[id(x)] = pending[id(x)] + gx
                else:
                    pending[id(x)] = gx
        self.records.clear()


def _is_leaf(x):
    return getattr(x, "_leaf", None) is not False


class _Node(Tensor):
    """Result of a recorded operation (not a leaf)."""

    __slots__ = ()
    _leaf = False


def _tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(value, inputs, backward_fn):
    if _active and any(x.requires_grad for x in inputs):
        out = _Node(value, requires_grad=True)
        _active[-1].record(out, inputs, backward_fn)
        return out
    return Tensor(value)


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b):
    a, b = _tensor(a), _tensor(b)
    _same_shape(a, b, "add")
    return _emit(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = _tensor(a), _tensor(b)
    _same_shape(a, b, "sub")
    return _emit(a.value - b.value, (a, b), lambda g: (g, -g))


def neg(a):
    a = _tensor(a)
    return _emit(-a.value, (a,), lambda g: (-g,))


def mul(a, b):
    """Pointwise product."""
    a, b = _tensor(a), _tensor(b)
    _same_shape(a, b, "mul")
    av, bv = a.value, b.value
    return _emit(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(x, s):
    """``x * s`` for a scalar tensor ``s`` (shape () or (1,))."""
    x, s = _tensor(x), _tensor(s)
    if s.value.size != 1:
        raise ValueError(f"scale factor must be a scalar, got shape {s.shape}")
    xv, sv = x.value, s.value
    factor = sv.reshape(())

    def backward(g):
        return g * factor, np.sum(g * xv, dtype=g.dtype).reshape(sv.shape)

    return _emit(xv * factor, (x, s), backward)


def relu(x):
    x = _tensor(x)
    mask = x.value > 0
    return _emit(np.maximum(x.value, 0), (x,), lambda g: (g * mask,))


def shift(x, direction):
    """Neighbour lookup over the spatial axes of a (B, H, W, C) tensor.

    Direction 0..3 = north, west, south, east.
    """
    x = _tensor(x)

    def spatial(fn, a):
        return np.ascontiguousarray(fn(a.transpose(0, 3, 1, 2), direction).transpose(0, 2, 3, 1))

    return _emit(spatial(kernels.shift, x.value), (x,),
                 lambda g: (spatial(kernels.shift_adjoint, g),))


def channel(x, c):
    """Select channel ``c`` of a (B, H, W, C) tensor, keeping the channel axis."""
    x = _tensor(x)
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[..., c:c + 1] = g
        return (gx,)

    return _emit(np.ascontiguousarray(x.value[..., c:c + 1]), (x,), backward)


def sum_all(x):
    x = _tensor(x)
    shape = x.shape
    return _emit(np.sum(x.value), (x,), lambda g: (np.full(shape, g, dtype=x.dtype),))


def mse_loss(pred, target):
    """Mean squared error against a constant target array."""
    pred = _tensor(pred)
    target = np.asarray(target.value if isinstance(target, Tensor) else target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.value - target
    n = diff.size
    return _emit(np.mean(diff * diff), (pred,), lambda g: (g * (2.0 / n) * diff,))


def conv3x3(x, weight, bias):
    """Same-size 3x3 cross-correlation with zero padding plus per-channel bias.

    x: (B, H, W, Cin) channels-last; weight: (Cout, Cin, 3, 3); bias: (Cout,).
    Returns (B, H, W, Cout).
    """
    x, weight, bias = _tensor(x), _tensor(weight), _tensor(bias)
    if x.value.ndim != 4:
        raise ValueError(f"conv3x3 expects (B, H, W, C), got {x.shape}")
    b, h, w, cin = x.shape
    cout = weight.shape[0]
    if weight.shape != (cout, cin, 3, 3):
        raise ValueError(f"conv3x3: weight shape {weight.shape} does not fit {cin} input channels")
    if bias.shape != (cout,):
        raise ValueError(f"conv3x3: bias shape {bias.shape}, expected ({cout},)")
    cols = kernels.im2col3x3(x.value)
    wmat = np.ascontiguousarray(weight.value.transpose(2, 3, 1, 0)).reshape(9 * cin, cout)
    out = cols @ wmat
    out += bias.value
    n = b * h * w

    def backward(g):
        gm = g.reshape(n, cout)
        gw = (cols.T @ gm).reshape(3, 3, cin, cout).transpose(3, 2, 0, 1)
        gb = gm.sum(axis=0)
        gx = kernels.col2im3x3(gm @ wmat.T, x.shape) if x.requires_grad else None
        return gx, np.ascontiguousarray(gw), gb

    return _emit(out.reshape(b, h, w, cout), (x, weight, bias), backward)


def stencil5(u, planes):
    """Non-stationary 5-point stencil ``sum_d planes[..., d] * shift_d(u) + planes[..., 4] * u``.

    u: (B, H, W, 1); planes: (B, H, W, 5) ordered (north, west, south, east, center).
    """
    u, planes = _tensor(u), _tensor(planes)
    if u.value.ndim != 4 or u.shape[3] != 1:
        raise ValueError(f"stencil5 expects a single-channel (B, H, W, 1) image, got {u.shape}")
    if planes.shape != u.shape[:3] + (5,):
        raise ValueError(f"stencil5: planes shape {planes.shape} does not match image {u.shape}")
    uv, pv = u.value[..., 0], planes.value
    value = kernels.stencil_forward(uv, pv)[..., None]

    def backward(g):
        du, dp = kernels.stencil_backward(uv, pv, g[..., 0])
        return du[..., None], dp

    return _emit(value, (u, planes), backward)


def diffusion_stencil(u, gamma):
    """Zero-mean stencil in flux form, ``sum_d gamma[d] * (shift_d(u) - u)``.

    u: (B, H, W, 1); gamma: (4, H, W) directional planes shared by the batch.
    """
    u, gamma = _tensor(u), _tensor(gamma)
    if u.value.ndim != 4 or u.shape[3] != 1:
        raise ValueError(f"diffusion_stencil expects (B, H, W, 1), got {u.shape}")
    if gamma.shape != (4,) + u.shape[1:3]:
        raise ValueError(f"diffusion_stencil: gamma shape {gamma.shape} does not match image {u.shape}")
    uv, gv = u.value[..., 0], gamma.value
    diffs = [kernels.shift(uv, d) - uv for d in range(4)]
    value = np.zeros_like(uv)
    for d in range(4):
        value += gv[d] * diffs[d]

    def backward(g):
        g = g[..., 0]
        dgamma = np.stack([np.sum(g * diffs[d], axis=0) for d in range(4)])
        du = np.zeros_like(uv)
        for d in range(4):
            wg = gv[d] * g
            du += kernels.shift_adjoint(wg, d) - wg
        return du[..., None], dgamma

    return _emit(value[..., None], (u, gamma), backward)
