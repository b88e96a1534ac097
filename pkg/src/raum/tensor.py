"""Minimal dense float64 tensor library with tape-based reverse-mode autodiff.

Everything downstream (backbone, attention, losses) is built from the ops in
this module. Arrays are numpy float64, row-major. Gradients are recorded on an
explicit :class:`Tape`; ops executed outside any active tape run gradient-free,
which is how pseudo-label generation stays detached.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .kernels import backend


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested op."""


class ConfigError(ValueError):
    """A parameter is outside its documented domain."""


class DataError(ValueError):
    """Input data violates a structural requirement."""


_ACTIVE_TAPE: "Tape | None" = None


class Tensor:
    """n-d float64 array, optionally participating in gradient recording."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: "Tape | None" = None

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
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)


class Tape:
    """Ordered record of ops for one forward pass.

    Used as a context manager; ops run inside the ``with`` block are recorded.
    Backward replays the nodes in exact reverse recording order and may only
    run once per recording.
    """

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable[[np.ndarray], None]]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a tape is already active (single tape per forward pass)")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None

    def record(self, out: Tensor, inputs: tuple[Tensor, ...],
               backward_fn: Callable[[np.ndarray], None]) -> None:
        self.nodes.append((out, inputs, backward_fn))
        out._tape = self

    def backward(self, loss: Tensor) -> None:
        """Populate .grad on every requires_grad tensor reachable from loss."""
        if self._consumed:
            raise RuntimeError("backward already ran on this tape; re-record the forward pass")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._consumed = True
        loss.accumulate_grad(np.ones_like(loss.data))
        for out, _inputs, backward_fn in reversed(self.nodes):
            if out.grad is None:
                continue  # not on any path to the loss
            backward_fn(out.grad)


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE


def backward(loss: Tensor) -> None:
    """Reverse pass from a scalar loss using the tape that recorded it."""
    if loss._tape is None:
        raise RuntimeError("loss was not recorded on any tape")
    loss._tape.backward(loss)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make_op(out_data: np.ndarray, inputs: tuple[Tensor, ...],
             backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(out_data)
    tape = _ACTIVE_TAPE
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum-reduce a gradient back to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / reduction ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.shape))

    return _make_op(out, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.shape))

    return _make_op(out, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return _make_op(out, (a, b), bwd)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 1 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make_op(out, (a, b), bwd)


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    x = _as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if not x.requires_grad:
            return
        if axis is None:
            x.accumulate_grad(np.broadcast_to(g, x.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            x.accumulate_grad(np.broadcast_to(gg, x.shape).copy())

    return _make_op(out, (x,), bwd)


def tmean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    x = _as_tensor(x)
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / float(count))


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    out = x.data.reshape(shape)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g.reshape(x.shape))

    return _make_op(out, (x,), bwd)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    out = np.ascontiguousarray(x.data.transpose(axes))
    inv = tuple(np.argsort(axes))

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g.transpose(inv))

    return _make_op(out, (x,), bwd)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def relu(x) -> Tensor:
    x = _as_tensor(x)
    out = np.maximum(x.data, 0.0)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g * (x.data > 0.0))

    return _make_op(out, (x,), bwd)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # piecewise form avoids exp overflow for large |z|
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    s = _sigmoid(x.data)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g * s * (1.0 - s))

    return _make_op(s, (x,), bwd)


def softplus(x) -> Tensor:
    x = _as_tensor(x)
    out = np.logaddexp(0.0, x.data)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g * _sigmoid(x.data))

    return _make_op(out, (x,), bwd)


def texp(x) -> Tensor:
    x = _as_tensor(x)
    out = np.exp(x.data)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g * out)

    return _make_op(out, (x,), bwd)


def softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    s = ez / ez.sum(axis=axis, keepdims=True)

    def bwd(g):
        if x.requires_grad:
            inner = (g * s).sum(axis=axis, keepdims=True)
            x.accumulate_grad(s * (g - inner))

    return _make_op(s, (x,), bwd)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gamma.data * xhat + beta.data

    def bwd(g):
        if gamma.requires_grad:
            gamma.accumulate_grad(_unbroadcast(g * xhat, gamma.shape))
        if beta.requires_grad:
            beta.accumulate_grad(_unbroadcast(g, beta.shape))
        if x.requires_grad:
            gg = g * gamma.data
            m1 = gg.mean(axis=-1, keepdims=True)
            m2 = (gg * xhat).mean(axis=-1, keepdims=True)
            x.accumulate_grad((gg - m1 - xhat * m2) * inv)

    return _make_op(out, (x, gamma, beta), bwd)


# ---------------------------------------------------------------------------
# dropout
# ---------------------------------------------------------------------------

def dropout(x: Tensor, rate: float, active: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-rate) when active."""
    x = _as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not active or rate == 0.0:
        out = x.data

        def bwd_id(g):
            if x.requires_grad:
                x.accumulate_grad(g)

        return _make_op(out, (x,), bwd_id)
    if rng is None:
        raise ConfigError("active dropout requires an explicit rng")
    scale = 1.0 / (1.0 - rate)
    mask = (rng.random(x.shape) >= rate) * scale
    out = x.data * mask

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g * mask)

    return _make_op(out, (x,), bwd)


# ---------------------------------------------------------------------------
# cross entropy
# ---------------------------------------------------------------------------

def cross_entropy(pred: Tensor, target, from_logits: bool = True) -> Tensor:
    """-log p[target], stable via log-sum-exp when given logits.

    1-D pred with an int target gives a scalar; (B, K) pred with a length-B
    target vector gives per-row losses (reduce with tape ops as needed).
    """
    pred = _as_tensor(pred)
    if pred.ndim == 1:
        batched = False
        logits = pred.data[None, :]
        targets = np.asarray([target], dtype=np.intp)
    elif pred.ndim == 2:
        batched = True
        logits = pred.data
        targets = np.asarray(target, dtype=np.intp)
        if targets.shape != (logits.shape[0],):
            raise ShapeError(f"targets shape {targets.shape} does not match batch {logits.shape[0]}")
    else:
        raise ShapeError(f"cross_entropy expects 1-D or 2-D input, got {pred.shape}")
    k = logits.shape[1]
    if np.any(targets < 0) or np.any(targets >= k):
        raise IndexError(f"target out of range [0, {k})")
    rows = np.arange(logits.shape[0])

    if from_logits:
        m = logits.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
        losses = lse - logits[rows, targets]

        def bwd(g):
            if not pred.requires_grad:
                return
            sm = np.exp(logits - m)
            sm /= sm.sum(axis=1, keepdims=True)
            sm[rows, targets] -= 1.0
            gg = sm * np.asarray(g).reshape(-1, 1)
            pred.accumulate_grad(gg if batched else gg[0])

    else:
        p_t = logits[rows, targets]
        if np.any(p_t <= 0.0):
            losses = np.where(p_t > 0.0, -np.log(np.maximum(p_t, 1e-300)), np.inf)
        else:
            losses = -np.log(p_t)

        def bwd(g):
            if not pred.requires_grad:
                return
            gg = np.zeros_like(logits)
            gg[rows, targets] = -np.asarray(g).reshape(-1) / p_t
            pred.accumulate_grad(gg if batched else gg[0])

    out = losses if batched else losses[0]
    return _make_op(np.asarray(out), (pred,), bwd)


# ---------------------------------------------------------------------------
# conv2d and the fused selective scan (kernel-backed)
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padded cross-correlation for 1x1 and 3x3 kernels.

    Accepts (H, W, Cin) or batched (B, H, W, Cin) input; kernel is
    (kh, kw, Cin, Cout).
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if kernel.ndim != 4:
        raise ShapeError(f"kernel must be (kh, kw, Cin, Cout), got {kernel.shape}")
    kh, kw, cin, _cout = kernel.shape
    if (kh, kw) not in ((1, 1), (3, 3)):
        raise ConfigError(f"unsupported kernel size {kh}x{kw}; only 1x1 and 3x3 are built")
    squeeze = x.ndim == 3
    xb = x.data[None] if squeeze else x.data
    if xb.ndim != 4 or xb.shape[-1] != cin:
        raise ShapeError(f"input {x.shape} incompatible with kernel {kernel.shape}")

    y = backend.conv2d_forward(xb, kernel.data)

    def bwd(g):
        gb = g[None] if squeeze else g
        gx, gw = backend.conv2d_backward(xb, kernel.data, np.ascontiguousarray(gb))
        if x.requires_grad:
            x.accumulate_grad(gx[0] if squeeze else gx)
        if kernel.requires_grad:
            kernel.accumulate_grad(gw)

    out = _make_op(y[0] if squeeze else y, (x, kernel), bwd)
    if bias is not None:
        out = add(out, bias)
    return out


def ssm_scan(delta: Tensor, a: Tensor, b: Tensor, c: Tensor, x: Tensor) -> Tensor:
    """Fused selective-scan recurrence.

    Shapes: delta, x (B, L, C); a (C, N) strictly negative; b, c (B, L, N).
    h_t = exp(delta_t * a) . h_{t-1} + delta_t * b_t * x_t ; y_t = <c_t, h_t>.
    """
    delta, a, b, c, x = map(_as_tensor, (delta, a, b, c, x))
    if x.ndim != 3 or delta.shape != x.shape:
        raise ShapeError(f"scan needs (B, L, C) delta/x, got {delta.shape} / {x.shape}")
    if b.shape != c.shape or b.shape[:2] != x.shape[:2] or a.shape != (x.shape[2], b.shape[2]):
        raise ShapeError(f"scan shapes disagree: a {a.shape}, b {b.shape}, x {x.shape}")

    y, h = backend.scan_forward(delta.data, a.data, b.data, c.data, x.data)

    def bwd(g):
        gd, ga, gb, gc, gx = backend.scan_backward(
            delta.data, a.data, b.data, c.data, x.data, h, np.ascontiguousarray(g))
        for t, grad in ((delta, gd), (a, ga), (b, gb), (c, gc), (x, gx)):
            if t.requires_grad:
                t.accumulate_grad(grad)

    return _make_op(y, (delta, a, b, c, x), bwd)


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------

def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    f must be a pure scalar-valued function of x. Relative error per
    coordinate is |autodiff - central| / max(1, |central|).
    """
    x.requires_grad = True
    x.zero_grad()
    with Tape() as tape:
        y = f(x)
    tape.backward(y)
    auto = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    flat = x.data.reshape(-1)
    num = np.zeros(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x).item()
        flat[i] = orig - h
        fm = f(x).item()
        flat[i] = orig
        num[i] = (fp - fm) / (2.0 * h)

    err = np.abs(auto.reshape(-1) - num) / np.maximum(1.0, np.abs(num))
    return float(err.max()) if err.size else 0.0


def parameters_grad_check(f: Callable[[], Tensor], params: Iterable[Tensor],
                          h: float = 1e-5) -> float:
    """grad_check over a set of parameter tensors for a closed-over forward."""
    params = list(params)
    for p in params:
        p.requires_grad = True
        p.zero_grad()
    with Tape() as tape:
        y = f()
    tape.backward(y)

    worst = 0.0
    for p in params:
        auto = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            err = abs(auto.reshape(-1)[i] - num) / max(1.0, abs(num))
            worst = max(worst, err)
    return worst
