"""Dense float64 tensors with reverse-mode automatic differentiation.

A module-level tape records every differentiable op in execution order.
``backward(loss)`` replays the tape in reverse, accumulating gradients into
every reachable leaf, then consumes the tape. One forward/backward pass owns
the tape exclusively; wrap evaluation-only code in ``no_grad()`` so it records
nothing.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "DiffGraph",
    "AdamState",
    "no_grad",
    "is_recording",
    "backward",
    "add",
    "sub",
    "mul",
    "scale",
    "sigmoid",
    "gelu",
    "relu",
    "matmul",
    "conv1d",
    "depthwise_conv1d",
    "reshape",
    "transpose",
    "concat",
    "narrow",
    "roll",
    "repeat_heads",
    "softmax",
    "layer_norm",
    "sum_all",
    "mse",
    "mae",
    "dropout",
    "adam_step",
    "clip_grad_norm",
    "set_debug_checks",
    "enable_mac_counting",
    "mac_count",
    "reset_mac_count",
]

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class DiffGraph:
    """Tape of recorded ops; recording order is a topological order."""

    __slots__ = ("nodes",)

    def __init__(self):
        # each node is (output tensor, backward closure)
        self.nodes = []

    def clear(self):
        self.nodes.clear()


_tape = DiffGraph()
_recording = True

# Debug-mode finiteness checks (off by default; cheap to leave off).
_debug_checks = False

# Multiply-accumulate counters for the complexity report.
_counting_macs = False
_mac_total = 0


def set_debug_checks(enabled: bool) -> None:
    """When enabled, every op asserts its output is finite."""
    global _debug_checks
    _debug_checks = bool(enabled)


def enable_mac_counting(enabled: bool = True) -> None:
    global _counting_macs
    _counting_macs = bool(enabled)


def reset_mac_count() -> None:
    global _mac_total
    _mac_total = 0


def mac_count() -> int:
    """Multiply-accumulate count since the last reset (0 unless enabled)."""
    return _mac_total


def _add_macs(n: int) -> None:
    global _mac_total
    if _counting_macs:
        _mac_total += int(n)


@contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _recording
    prev = _recording
    _recording = False
    try:
        yield
    finally:
        _recording = prev


def is_recording() -> bool:
    return _recording


class Tensor:
    """A dense float64 array plus optional gradient."""

    __slots__ = ("data", "requires_grad", "_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._grad = None

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
    def grad(self):
        """Accumulated gradient; zeros for leaves no backward pass reached."""
        if self._grad is None:
            return np.zeros_like(self.data)
        return self._grad

    def zero_grad(self):
        self._grad = None

    def _accum(self, g):
        if self._grad is None:
            self._grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self._grad += g

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar used throughout the model code
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(out_data: np.ndarray, backward_fn, *inputs: Tensor) -> Tensor:
    """Wrap op output; record backward on the tape if anything needs grad."""
    if _debug_checks and not np.all(np.isfinite(out_data)):
        raise FloatingPointError("non-finite values produced by an op")
    needs = _recording and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        _tape.nodes.append((out, backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """Reverse-replay the tape from ``loss``, then consume the tape.

    Every leaf reachable from ``loss`` receives its accumulated gradient;
    leaves off the path keep a zero gradient.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    loss._accum(np.ones_like(loss.data))
    for out, fn in reversed(_tape.nodes):
        if out._grad is not None:
            fn(out._grad)
    _tape.clear()


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (adjoint of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_binary_shapes(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(
            f"{op}: shapes {a.shape} and {b.shape} do not align"
        ) from None


# ---------------------------------------------------------------------------
# elementwise ops

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_binary_shapes("add", a, b)

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, bwd, a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_binary_shapes("sub", a, b)

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, bwd, a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_binary_shapes("mul", a, b)
    ad, bd = a.data, b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * bd, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * ad, b.shape))

    return _make(ad * bd, bwd, a, b)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bwd(g):
        if a.requires_grad:
            a._accum(g * c)

    return _make(a.data * c, bwd, a)


def sigmoid(a: Tensor) -> Tensor:
    # stable in both tails
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bwd(g):
        if a.requires_grad:
            a._accum(g * y * (1.0 - y))

    return _make(y, bwd, a)


def gelu(a: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x) with the Gaussian CDF (erf form)."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    y = x * cdf

    def bwd(g):
        if a.requires_grad:
            pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
            a._accum(g * (cdf + x * pdf))

    return _make(y, bwd, a)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bwd(g):
        if a.requires_grad:
            a._accum(g * mask)

    return _make(a.data * mask, bwd, a)


# ---------------------------------------------------------------------------
# contractions and convolutions

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the trailing two axes."""
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs tensors with at least 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(
            f"matmul: inner dims disagree, {a.shape} x {b.shape}"
        )
    ad, bd = a.data, b.data
    out = ad @ bd
    _add_macs(out.size // out.shape[-1] * ad.shape[-1] * out.shape[-1])

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g @ bd.swapaxes(-1, -2), a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(ad.swapaxes(-1, -2) @ g, b.shape))

    return _make(out, bwd, a, b)


def _windows(x: np.ndarray, k: int) -> np.ndarray:
    """Sliding windows of width k over the last axis (read-only view)."""
    pad = k - 1
    out_len = x.shape[-1] - pad
    return np.lib.stride_tricks.sliding_window_view(x, k, axis=-1)[..., :out_len, :]


def _pad_last(x: np.ndarray, pad: int) -> np.ndarray:
    widths = [(0, 0)] * (x.ndim - 1) + [(pad, pad)]
    return np.pad(x, widths)


def conv1d(x: Tensor, kernels: Tensor) -> Tensor:
    """Length-preserving correlation, stride 1, symmetric zero padding.

    x: (..., Cin, L); kernels: (Cout, Cin, K) with K odd -> (..., Cout, L).
    """
    if kernels.ndim != 3:
        raise ValueError(f"conv1d kernels must be (Cout, Cin, K), got {kernels.shape}")
    cout, cin, k = kernels.shape
    if k % 2 == 0:
        raise ValueError(f"conv1d kernel width must be odd, got {k}")
    if x.ndim < 2 or x.shape[-2] != cin:
        raise ValueError(
            f"conv1d: input {x.shape} does not match kernels {kernels.shape}"
        )
    pad = (k - 1) // 2
    xd, kd = x.data, kernels.data
    xw = _windows(_pad_last(xd, pad), k)           # (..., Cin, L, K)
    out = np.einsum("...ctk,ock->...ot", xw, kd, optimize=True)
    L = xd.shape[-1]
    _add_macs(out.size // (cout * L) * cout * L * cin * k)

    def bwd(g):
        if kernels.requires_grad:
            gk = np.einsum("...ot,...ctk->ock", g, xw, optimize=True)
            kernels._accum(gk)
        if x.requires_grad:
            gw = _windows(_pad_last(g, k - 1), k)  # (..., Cout, L+2*pad, K)
            kflip = kd[:, :, ::-1]
            gx_pad = np.einsum("...otk,ock->...ct", gw, kflip, optimize=True)
            x._accum(gx_pad[..., pad:pad + L])

    return _make(out, bwd, x, kernels)


def depthwise_conv1d(x: Tensor, kernels: Tensor) -> Tensor:
    """Per-channel correlation, stride 1, symmetric zero padding.

    x: (..., Ch, P); kernels: (Ch, K) with K odd -> (..., Ch, P).
    """
    if kernels.ndim != 2:
        raise ValueError(f"depthwise kernels must be (Ch, K), got {kernels.shape}")
    ch, k = kernels.shape
    if k % 2 == 0:
        raise ValueError(f"depthwise kernel width must be odd, got {k}")
    if x.ndim < 2 or x.shape[-2] != ch:
        raise ValueError(
            f"depthwise_conv1d: input {x.shape} has channel extent "
            f"{x.shape[-2] if x.ndim >= 2 else '?'}, kernels expect {ch}"
        )
    pad = (k - 1) // 2
    xd, kd = x.data, kernels.data
    xw = _windows(_pad_last(xd, pad), k)           # (..., Ch, P, K)
    out = np.einsum("...ctk,ck->...ct", xw, kd, optimize=True)
    _add_macs(out.size * k)

    def bwd(g):
        if kernels.requires_grad:
            gk = np.einsum("...ct,...ctk->ck", g, xw, optimize=True)
            kernels._accum(gk)
        if x.requires_grad:
            gw = _windows(_pad_last(g, k - 1), k)
            kflip = kd[:, ::-1]
            gx_pad = np.einsum("...ctk,ck->...ct", gw, kflip, optimize=True)
            P = xd.shape[-1]
            x._accum(gx_pad[..., pad:pad + P])

    return _make(out, bwd, x, kernels)


# ---------------------------------------------------------------------------
# data movement

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size:
        raise ValueError(f"reshape {a.shape} -> {shape} changes element count")
    old = a.shape

    def bwd(g):
        if a.requires_grad:
            a._accum(g.reshape(old))

    return _make(a.data.reshape(shape), bwd, a)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ValueError(f"transpose axes {axes} invalid for ndim {a.ndim}")
    inv = np.argsort(axes)

    def bwd(g):
        if a.requires_grad:
            a._accum(g.transpose(inv))

    return _make(a.data.transpose(axes), bwd, a)


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat of empty list")
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        parts = np.split(g, splits, axis=axis)
        for t, p in zip(tensors, parts):
            if t.requires_grad:
                t._accum(p)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), bwd, *tensors)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis; backward scatters into the slice."""
    axis = axis % a.ndim
    if start < 0 or start + length > a.shape[axis]:
        raise ValueError(
            f"narrow [{start}:{start + length}] out of range for axis {axis} "
            f"of shape {a.shape}"
        )
    idx = tuple(
        slice(start, start + length) if i == axis else slice(None)
        for i in range(a.ndim)
    )

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[idx] = g
            a._accum(full)

    return _make(a.data[idx].copy(), bwd, a)


def roll(a: Tensor, shift: int, axis: int) -> Tensor:
    axis = axis % a.ndim

    def bwd(g):
        if a.requires_grad:
            a._accum(np.roll(g, -shift, axis=axis))

    return _make(np.roll(a.data, shift, axis=axis), bwd, a)


def repeat_heads(a: Tensor, reps: int) -> Tensor:
    """Repeat each leading-axis slice ``reps`` times consecutively.

    Backward sums the gradients of all replicas of a slice.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    s = a.shape[0]

    def bwd(g):
        if a.requires_grad:
            a._accum(g.reshape((s, reps) + a.shape[1:]).sum(axis=1))

    return _make(np.repeat(a.data, reps, axis=0), bwd, a)


# ---------------------------------------------------------------------------
# normalization and reductions

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        if a.requires_grad:
            dot = (g * y).sum(axis=axis, keepdims=True)
            a._accum(y * (g - dot))

    return _make(y, bwd, a)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, axis: int = -1,
               eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean / unit variance along ``axis``, then affine."""
    axis = axis % x.ndim
    xd = x.data
    mu = xd.mean(axis=axis, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gshape = tuple(x.shape[axis] if i == axis else 1 for i in range(x.ndim))
    gd = gamma.data.reshape(gshape)
    bd = beta.data.reshape(gshape)
    y = gd * xhat + bd

    def bwd(g):
        if gamma.requires_grad:
            red = tuple(i for i in range(x.ndim) if i != axis)
            gamma._accum((g * xhat).sum(axis=red).reshape(gamma.shape))
        if beta.requires_grad:
            red = tuple(i for i in range(x.ndim) if i != axis)
            beta._accum(g.sum(axis=red).reshape(beta.shape))
        if x.requires_grad:
            gh = g * gd
            m1 = gh.mean(axis=axis, keepdims=True)
            m2 = (gh * xhat).mean(axis=axis, keepdims=True)
            x._accum(inv * (gh - m1 - xhat * m2))

    return _make(y, bwd, x, gamma, beta)


def sum_all(a: Tensor) -> Tensor:
    def bwd(g):
        if a.requires_grad:
            a._accum(np.full(a.shape, float(g)))

    return _make(np.asarray(a.data.sum()), bwd, a)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ValueError(f"mse: shapes differ, {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def bwd(g):
        c = 2.0 * float(g) / n
        if pred.requires_grad:
            pred._accum(c * diff)
        if target.requires_grad:
            target._accum(-c * diff)

    return _make(np.asarray((diff * diff).mean()), bwd, pred, target)


def mae(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ValueError(f"mae: shapes differ, {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    sign = np.sign(diff)  # subgradient 0 at exact ties

    def bwd(g):
        c = float(g) / n
        if pred.requires_grad:
            pred._accum(c * sign)
        if target.requires_grad:
            target._accum(-c * sign)

    return _make(np.asarray(np.abs(diff).mean()), bwd, pred, target)


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when p == 0."""
    if p <= 0.0:
        return a
    if p >= 1.0:
        raise ValueError("dropout rate must be < 1")
    mask = (rng.random(a.shape) >= p) / (1.0 - p)

    def bwd(g):
        if a.requires_grad:
            a._accum(g * mask)

    return _make(a.data * mask, bwd, a)


# ---------------------------------------------------------------------------
# optimizer

class AdamState:
    """First/second moment estimates per parameter, keyed by position."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params, grads, state: AdamState):
    """Bias-corrected Adam update, in place on ``param.data``."""
    if len(params) != len(state.m):
        raise ValueError("adam_step: parameter count differs from state")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.data.shape:
            raise ValueError(
                f"adam_step: grad shape {g.shape} != param shape {p.data.shape}"
            )
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params, state


def clip_grad_norm(grads, max_norm: float):
    """Scale the whole gradient list so its global L2 norm is <= max_norm."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if total > max_norm > 0:
        f = max_norm / total
        grads = [g * f for g in grads]
    return grads, total
