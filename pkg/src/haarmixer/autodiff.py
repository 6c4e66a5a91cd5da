"""Dense tensors with tape-based reverse-mode differentiation.

The engine is intentionally small: a ``Tensor`` wraps a numpy array of
rank 0..3, and every differentiable operation appends one backward
closure to the active ``Tape``.  Executing order is a topological order,
so the backward pass is a single reversed sweep that visits each
recorded op exactly once.  Running ops with no tape active is the
inference / benchmark mode: values are computed, nothing is recorded.

    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with Tape():
        loss = sum_all(mul_elementwise(x, x))
    backward(loss)        # x.grad == 2 * x

Arrays are float64 by default; float32 inputs are kept as float32 so
benchmark code can run in single precision.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import GraphError, ShapeError

_MAX_RANK = 3

_state = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_state, "tape", None)


class Tensor:
    """Dense real array of rank <= 3 with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            arr = np.asarray(data)
            if arr.dtype not in (np.float32, np.float64):
                arr = arr.astype(np.float64)
        else:
            arr = np.asarray(data, dtype=dtype)
        if arr.ndim > _MAX_RANK:
            raise ShapeError(
                f"tensors are limited to rank {_MAX_RANK}, got shape {arr.shape}"
            )
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        # Set when this tensor is the output of an op recorded on a live tape.
        self.tape = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def tracked(self) -> bool:
        """True if gradients should flow to or through this tensor."""
        return self.requires_grad or self.tape is not None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of executed ops for one forward graph.

    Use as a context manager around the forward pass; each graph gets a
    fresh tape and backward() may run once per tape.
    """

    def __init__(self):
        self._backwards: list[Callable[[], None]] = []
        self._used = False

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise GraphError("a tape is already active; nested tapes are not supported")
        _state.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _state.tape = None
        return False


class _tape_suspended:
    """Temporarily deactivate the current tape (used by the FD oracle)."""

    def __enter__(self):
        self._prev = _active_tape()
        _state.tape = None
        return self

    def __exit__(self, exc_type, exc, tb):
        _state.tape = self._prev
        return False


def record_op(inputs: Sequence[Tensor], outputs: Sequence[Tensor],
              backward_fn: Callable[[], None]) -> None:
    """Register the backward closure of a custom differentiable op.

    No-op unless a tape is active and some input is tracked.  The
    closure must read the outputs' ``.grad`` (None means no incoming
    gradient) and accumulate into the inputs via ``accumulate_grad``.
    """
    tape = _active_tape()
    if tape is None or not any(t.tracked() for t in inputs):
        return
    for out in outputs:
        out.tape = tape
    tape._backwards.append(backward_fn)


def accumulate_grad(tensor: Tensor, g) -> None:
    """Add a gradient contribution to ``tensor.grad`` (creating it if absent).

    The first contribution is adopted by reference and later ones build a
    fresh sum, so a buffer shared between tensors is never mutated in place.
    """
    if g is None or not tensor.tracked():
        return
    if np.shape(g) != tensor.data.shape:
        raise GraphError(
            f"gradient shape {np.shape(g)} does not match tensor shape {tensor.data.shape}"
        )
    if tensor.grad is None:
        tensor.grad = g
    else:
        tensor.grad = tensor.grad + g


def backward(loss: Tensor) -> None:
    """Reverse sweep from a scalar loss; populates .grad on tracked tensors."""
    if loss.data.ndim != 0:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    tape = loss.tape
    if tape is None:
        raise GraphError(
            "loss is detached: it was not produced by ops recorded on a tape"
        )
    if tape._used:
        raise GraphError("backward was already called on this tape; build a fresh graph")
    tape._used = True
    loss.grad = np.ones((), dtype=loss.data.dtype)
    for fn in reversed(tape._backwards):
        fn()


def zero_grad(tensors: Sequence[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, opname: str) -> None:
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(
            f"{opname}: shapes {a.data.shape} and {b.data.shape} do not broadcast"
        ) from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    """a + b with numpy broadcasting (e.g. a bias row added to every row)."""
    _check_broadcast(a, b, "add")
    out = Tensor(a.data + b.data)

    def grads():
        g = out.grad
        if g is None:
            return
        accumulate_grad(a, _unbroadcast(g, a.data.shape))
        accumulate_grad(b, _unbroadcast(g, b.data.shape))

    record_op((a, b), (out,), grads)
    return out


def mul_elementwise(a: Tensor, b: Tensor) -> Tensor:
    """a * b elementwise; b may broadcast (length-d vector over rows, scalar)."""
    _check_broadcast(a, b, "mul_elementwise")
    out = Tensor(a.data * b.data)

    def grads():
        g = out.grad
        if g is None:
            return
        accumulate_grad(a, _unbroadcast(g * b.data, a.data.shape))
        accumulate_grad(b, _unbroadcast(g * a.data, b.data.shape))

    record_op((a, b), (out,), grads)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    """a * c for a plain python constant (no gradient to c)."""
    out = Tensor(a.data * c)

    def grads():
        if out.grad is not None:
            accumulate_grad(a, out.grad * c)

    record_op((a,), (out,), grads)
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())

    def grads():
        g = out.grad
        if g is None:
            return
        accumulate_grad(a, np.full_like(a.data, float(g)))

    record_op((a,), (out,), grads)
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading batch axes broadcast as in numpy matmul."""
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ: {ad.shape} @ {bd.shape}")

    if ad.ndim == 3 and bd.ndim == 2:
        # fold the batch into rows: one large GEMM beats many small ones,
        # and the weight gradient avoids a batched intermediate
        lead, k = ad.shape[:2], ad.shape[2]
        flat = ad.reshape(-1, k)
        out = Tensor((flat @ bd).reshape(*lead, bd.shape[1]))

        def grads():
            g = out.grad
            if g is None:
                return
            gf = g.reshape(-1, bd.shape[1])
            accumulate_grad(a, (gf @ bd.T).reshape(ad.shape))
            accumulate_grad(b, flat.T @ gf)

        record_op((a, b), (out,), grads)
        return out

    out = Tensor(ad @ bd)

    def grads():
        g = out.grad
        if g is None:
            return
        accumulate_grad(a, _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape))
        accumulate_grad(b, _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape))

    record_op((a, b), (out,), grads)
    return out


def linear(x: Tensor, w: Tensor, b: Tensor, activation: str | None = None) -> Tensor:
    """Fused x @ w + b with optional relu; one tape entry, one output buffer.

    Semantically identical to relu(add(matmul(x, w), b)); fused to cut
    memory traffic in the training loop.
    """
    if activation not in (None, "relu"):
        raise ValueError(f"unsupported activation {activation!r}")
    xd, wd = x.data, w.data
    if xd.ndim < 2 or wd.ndim != 2 or xd.shape[-1] != wd.shape[0]:
        raise ShapeError(f"linear: incompatible shapes {xd.shape} @ {wd.shape}")
    if b.data.shape != (wd.shape[1],):
        raise ShapeError(f"linear: bias shape {b.data.shape} != ({wd.shape[1]},)")
    flat = xd.reshape(-1, xd.shape[-1])
    h = flat @ wd
    h += b.data
    if activation == "relu":
        np.maximum(h, 0.0, out=h)
    out = Tensor(h.reshape(*xd.shape[:-1], wd.shape[1]))

    def grads():
        g = out.grad
        if g is None:
            return
        gf = g.reshape(-1, wd.shape[1])
        if activation == "relu":
            gf = gf * (out.data.reshape(gf.shape) > 0)
        accumulate_grad(b, gf.sum(axis=0))
        accumulate_grad(w, flat.T @ gf)
        accumulate_grad(x, (gf @ wd.T).reshape(xd.shape))

    record_op((x, w, b), (out,), grads)
    return out


def transpose_last2(a: Tensor) -> Tensor:
    if a.data.ndim < 2:
        raise ShapeError(f"transpose_last2 needs rank >= 2, got shape {a.data.shape}")
    out = Tensor(np.swapaxes(a.data, -1, -2).copy())

    def grads():
        if out.grad is not None:
            accumulate_grad(a, np.swapaxes(out.grad, -1, -2))

    record_op((a,), (out,), grads)
    return out


# ---------------------------------------------------------------------------
# nonlinearities and normalisation


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))

    def grads():
        if out.grad is not None:
            accumulate_grad(a, out.grad * (a.data > 0))

    record_op((a,), (out,), grads)
    return out


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax over the last axis, computed with per-row max subtraction."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s)

    def grads():
        g = out.grad
        if g is None:
            return
        dot = (g * s).sum(axis=-1, keepdims=True)
        accumulate_grad(a, s * (g - dot))

    record_op((a,), (out,), grads)
    return out


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then gain * x + bias."""
    if eps <= 0:
        raise ValueError(f"layer_norm eps must be positive, got {eps}")
    d = a.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain {gain.data.shape} / bias {bias.data.shape} "
            f"must both have shape ({d},) for input {a.data.shape}"
        )
    mu = a.data.mean(axis=-1, keepdims=True)
    xhat = a.data - mu
    var = np.einsum("...d,...d->...", xhat, xhat)[..., None] / d
    inv = 1.0 / np.sqrt(var + eps)
    xhat *= inv
    buf = xhat * gain.data
    buf += bias.data
    out = Tensor(buf)

    def grads():
        g = out.grad
        if g is None:
            return
        accumulate_grad(gain, _unbroadcast(g * xhat, gain.data.shape))
        accumulate_grad(bias, _unbroadcast(g, bias.data.shape))
        dx = g * gain.data
        m2 = np.einsum("...d,...d->...", dx, xhat)[..., None] / d
        dx -= dx.mean(axis=-1, keepdims=True)
        dx -= xhat * m2
        dx *= inv
        accumulate_grad(a, dx)

    record_op((a, gain, bias), (out,), grads)
    return out


# ---------------------------------------------------------------------------
# row shuffling (axis -2 is the sequence axis)


def split_even_odd(a: Tensor) -> tuple[Tensor, Tensor]:
    """Split rows into (x_0, x_2, ...) and (x_1, x_3, ...)."""
    if a.data.ndim < 2:
        raise ShapeError(f"split_even_odd needs rank >= 2, got shape {a.data.shape}")
    n = a.data.shape[-2]
    if n % 2 != 0:
        raise ShapeError(
            f"split_even_odd needs an even row count, got {n}; pad the sequence first"
        )
    even = Tensor(a.data[..., 0::2, :].copy())
    odd = Tensor(a.data[..., 1::2, :].copy())

    def grads():
        ge, go = even.grad, odd.grad
        if ge is None and go is None:
            return
        g = np.zeros_like(a.data)
        if ge is not None:
            g[..., 0::2, :] = ge
        if go is not None:
            g[..., 1::2, :] = go
        accumulate_grad(a, g)

    record_op((a,), (even, odd), grads)
    return even, odd


def interleave(even: Tensor, odd: Tensor) -> Tensor:
    """Inverse of split_even_odd: rows alternate even, odd, even, odd, ..."""
    if even.data.shape != odd.data.shape:
        raise ShapeError(
            f"interleave: even {even.data.shape} and odd {odd.data.shape} must match"
        )
    if even.data.ndim < 2:
        raise ShapeError(f"interleave needs rank >= 2, got shape {even.data.shape}")
    m = even.data.shape[-2]
    shape = even.data.shape[:-2] + (2 * m, even.data.shape[-1])
    buf = np.empty(shape, dtype=np.result_type(even.data, odd.data))
    buf[..., 0::2, :] = even.data
    buf[..., 1::2, :] = odd.data
    out = Tensor(buf)

    def grads():
        g = out.grad
        if g is None:
            return
        accumulate_grad(even, g[..., 0::2, :])
        accumulate_grad(odd, g[..., 1::2, :])

    record_op((even, odd), (out,), grads)
    return out


def concat_last(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis (used to merge attention heads)."""
    if not parts:
        raise ValueError("concat_last needs at least one tensor")
    lead = parts[0].data.shape[:-1]
    for p in parts:
        if p.data.shape[:-1] != lead:
            raise ShapeError(
                f"concat_last: leading shape {p.data.shape[:-1]} differs from {lead}"
            )
    out = Tensor(np.concatenate([p.data for p in parts], axis=-1))
    widths = [p.data.shape[-1] for p in parts]

    def grads():
        g = out.grad
        if g is None:
            return
        off = 0
        for p, w in zip(parts, widths):
            accumulate_grad(p, g[..., off:off + w])
            off += w

    record_op(tuple(parts), (out,), grads)
    return out


# ---------------------------------------------------------------------------
# embedding and loss


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Select rows of ``table`` by integer id; gradient scatters back."""
    if table.data.ndim != 2:
        raise ShapeError(f"embedding table must be rank 2, got shape {table.data.shape}")
    idx = np.asarray(ids)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ValueError("token ids must be integers")
    v = table.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= v):
        raise ValueError(
            f"token id out of vocabulary: ids must lie in [0, {v}), "
            f"got range [{idx.min()}, {idx.max()}]"
        )
    out = Tensor(table.data[idx])

    def grads():
        g = out.grad
        if g is None:
            return
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.data.shape[1]))
        accumulate_grad(table, gt)

    record_op((table,), (out,), grads)
    return out


def cross_entropy_label_smoothed(logits: Tensor, targets, smoothing: float,
                                 mask=None) -> Tensor:
    """Mean label-smoothed cross entropy over unmasked positions.

    The target distribution puts 1 - smoothing on the target id and
    spreads smoothing uniformly over all vocabulary entries.  ``mask``
    (same shape as ``targets``) weights positions; zero drops a position
    from the mean.
    """
    if not 0.0 <= smoothing < 1.0:
        raise ValueError(f"smoothing must lie in [0, 1), got {smoothing}")
    ids = np.asarray(targets)
    if ids.shape != logits.data.shape[:-1]:
        raise ShapeError(
            f"targets shape {ids.shape} must match logits leading shape "
            f"{logits.data.shape[:-1]}"
        )
    v = logits.data.shape[-1]
    if ids.size == 0:
        raise ValueError("empty target batch")
    if ids.min() < 0 or ids.max() >= v:
        raise ValueError(f"target id out of range [0, {v})")
    if mask is None:
        m = np.ones(ids.shape, dtype=logits.data.dtype)
    else:
        m = np.asarray(mask, dtype=logits.data.dtype)
        if m.shape != ids.shape:
            raise ShapeError(f"mask shape {m.shape} must match targets shape {ids.shape}")
    total = m.sum()
    if total <= 0:
        raise ValueError("all positions are masked out of the loss")

    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    target_logp = np.take_along_axis(logp, ids[..., None], axis=-1)[..., 0]
    per_pos = -((1.0 - smoothing) * target_logp + smoothing * logp.mean(axis=-1))
    out = Tensor((per_pos * m).sum() / total)

    def grads():
        g = out.grad
        if g is None:
            return
        y = np.full_like(logp, smoothing / v)
        np.put_along_axis(y, ids[..., None], smoothing / v + (1.0 - smoothing), axis=-1)
        p = np.exp(logp)
        accumulate_grad(logits, (p - y) * (m[..., None] / total) * float(g))

    record_op((logits,), (out,), grads)
    return out


# ---------------------------------------------------------------------------
# finite-difference oracle


def finite_difference_gradient(f, x: Tensor, h: float = 1e-5) -> Tensor:
    """Central-difference gradient of scalar-valued ``f`` at ``x``.

    Test oracle, O(2 N) forward evaluations; f must be deterministic.
    Runs with any active tape suspended so probing records nothing.
    """
    if h <= 0:
        raise ValueError(f"step size h must be positive, got {h}")
    base = x.data
    out = np.zeros_like(base, dtype=np.float64)
    with _tape_suspended():
        it = np.nditer(base, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            xp = base.copy()
            xp[idx] += h
            xm = base.copy()
            xm[idx] -= h
            fp = f(Tensor(xp))
            fm = f(Tensor(xm))
            fp = float(fp.data) if isinstance(fp, Tensor) else float(fp)
            fm = float(fm.data) if isinstance(fm, Tensor) else float(fm)
            out[idx] = (fp - fm) / (2.0 * h)
            it.iternext()
    return Tensor(out)
