"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tape` records every primitive applied to tracked tensors, in
execution order (which is already a topological order: operands exist
before their consumers).  ``Tape.backward`` replays the records in
reverse, accumulating adjoints keyed by node handle.

Tensors without a tape are constants; combining a constant with a
tracked tensor yields a tracked result whose gradient flows only to the
tracked side.  A tape and its tensors belong to a single thread;
independent tapes may run concurrently.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from affectbench import kernels
from affectbench.errors import NumericsError
from affectbench.rng import Rng


class Tensor:
    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: Optional["Tape"] = None, node: Optional[int] = None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float64, np.float32):
            arr = arr.astype(np.float64)
        self.data = arr
        self.tape = tape
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __repr__(self):
        tracked = "" if self.node is None else f", node={self.node}"
        return f"Tensor(shape={tuple(self.data.shape)}{tracked})"


class Tape:
    """Ordered record of primitive ops with their adjoint rules."""

    def __init__(self):
        self._records: list[tuple[int, Callable]] = []
        self._next_node = 0
        self.grads: dict[int, np.ndarray] = {}

    def _alloc(self) -> int:
        node = self._next_node
        self._next_node += 1
        return node

    def watch(self, t: Tensor) -> Tensor:
        """Register a leaf tensor (parameter or input) on this tape."""
        if t.tape is not None and t.tape is not self:
            raise ValueError("tensor already belongs to a different tape")
        if t.node is None:
            t.tape = self
            t.node = self._alloc()
        return t

    def _record(self, backward_fn: Callable) -> int:
        node = self._alloc()
        self._records.append((node, backward_fn))
        return node

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Reverse sweep from a scalar loss; returns adjoints by node handle."""
        if loss.tape is not self or loss.node is None:
            raise ValueError("loss is not recorded on this tape")
        if loss.data.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
        grads: dict[int, np.ndarray] = {
            loss.node: np.ones_like(loss.data)
        }
        for node, fn in reversed(self._records):
            g = grads.get(node)
            if g is not None:
                fn(g, grads)
        self.grads = grads
        return grads

    def grad(self, t: Tensor) -> Optional[np.ndarray]:
        """Adjoint of the last backward() for a tensor on this tape."""
        if t.node is None:
            return None
        return self.grads.get(t.node)


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    if loss.tape is None:
        raise ValueError("loss is not recorded on any tape")
    return loss.tape.backward(loss)


def _acc(grads: dict, node: Optional[int], g: np.ndarray) -> None:
    if node is None:
        return
    cur = grads.get(node)
    grads[node] = g if cur is None else cur + g


def _shared_tape(*tensors: Tensor) -> Optional["Tape"]:
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is not None and tape is not t.tape:
                raise ValueError("operands belong to different tapes")
            tape = t.tape
    return tape


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a bias vector [C] against [B,C,...]."""
    bias_axes: Optional[tuple] = None
    if a.data.shape == b.data.shape:
        out_data = a.data + b.data
    elif b.data.ndim == 1 and a.data.ndim >= 2 and b.data.shape[0] == a.data.shape[1]:
        view = b.data.reshape((1, b.data.shape[0]) + (1,) * (a.data.ndim - 2))
        out_data = a.data + view
        bias_axes = (0,) + tuple(range(2, a.data.ndim))
    else:
        raise ValueError(f"cannot add shapes {a.data.shape} and {b.data.shape}")
    out = Tensor(out_data)
    tape = _shared_tape(a, b)
    if tape is not None:
        an, bn = a.node, b.node

        def bwd(g, grads):
            _acc(grads, an, g)
            _acc(grads, bn, g.sum(axis=bias_axes) if bias_axes is not None else g)

        out.tape = tape
        out.node = tape._record(bwd)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-d operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(
            f"inner dimensions disagree: {a.data.shape} @ {b.data.shape}"
        )
    out = Tensor(a.data @ b.data)
    tape = _shared_tape(a, b)
    if tape is not None:
        an, bn = a.node, b.node
        ad, bd = a.data, b.data

        def bwd(g, grads):
            _acc(grads, an, g @ bd.T)
            _acc(grads, bn, ad.T @ g)

        out.tape = tape
        out.node = tape._record(bwd)
    return out


def conv1d(x: Tensor, w: Tensor, bias: Tensor, pad: int = 0) -> Tensor:
    """1-d cross-correlation with zero padding.

    x: [B,Cin,L], w: [Cout,Cin,K], bias: [Cout] -> [B,Cout,L+2*pad-K+1].
    """
    if pad < 0:
        raise ValueError("pad must be nonnegative")
    b_sz, cin, length = x.data.shape
    cout, cin_w, k = w.data.shape
    if cin_w != cin:
        raise ValueError(f"weight expects {cin_w} input channels, input has {cin}")
    if bias.data.shape != (cout,):
        raise ValueError(f"bias must have shape ({cout},)")
    if k > length + 2 * pad:
        raise ValueError(f"kernel size {k} exceeds padded length {length + 2 * pad}")
    if pad:
        x_pad = np.zeros((b_sz, cin, length + 2 * pad), dtype=x.data.dtype)
        x_pad[:, :, pad:pad + length] = x.data
    else:
        x_pad = x.data
    out = Tensor(kernels.conv1d_forward(x_pad, w.data, bias.data))
    tape = _shared_tape(x, w, bias)
    if tape is not None:
        xn, wn, bn = x.node, w.node, bias.node
        wd = w.data

        def bwd(g, grads):
            g = np.ascontiguousarray(g)
            dx_pad, dw, dbias = kernels.conv1d_backward(x_pad, wd, g)
            if xn is not None:
                dx = dx_pad[:, :, pad:pad + length] if pad else dx_pad
                _acc(grads, xn, dx)
            _acc(grads, wn, dw)
            _acc(grads, bn, dbias)

        out.tape = tape
        out.node = tape._record(bwd)
    return out


def maxpool1d(x: Tensor, k: int = 2) -> Tensor:
    """Non-overlapping max pooling; trailing L mod k samples are dropped.

    Gradient goes entirely to the first maximal index of each window.
    """
    if k < 1:
        raise ValueError("pool size must be >= 1")
    b_sz, ch, length = x.data.shape
    lout = length // k
    lk = lout * k
    windows = x.data[:, :, :lk].reshape(b_sz, ch, lout, k)
    out = Tensor(windows.max(axis=3))
    tape = x.tape
    if tape is not None:
        idx = windows.argmax(axis=3)
        xn = x.node
        dtype = x.data.dtype

        def bwd(g, grads):
            dwin = np.zeros((b_sz, ch, lout, k), dtype=dtype)
            np.put_along_axis(dwin, idx[..., None], g[..., None], axis=3)
            dx = np.zeros((b_sz, ch, length), dtype=dtype)
            dx[:, :, :lk] = dwin.reshape(b_sz, ch, lk)
            _acc(grads, xn, dx)

        out.tape = tape
        out.node = tape._record(bwd)
    return out


def silu(x: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    sig = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(x.data * sig)
    tape = x.tape
    if tape is not None:
        xn, xd = x.node, x.data

        def bwd(g, grads):
            _acc(grads, xn, g * (sig * (1.0 + xd * (1.0 - sig))))

        out.tape = tape
        out.node = tape._record(bwd)
    return out


def dropout(x: Tensor, rate: float, mode: str, rng: Optional[Rng] = None) -> Tensor:
    """Inverted dropout; identity in eval mode and at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    keep = (rng.next_floats(x.data.size) >= rate).reshape(x.data.shape)
    scale = keep.astype(x.data.dtype) / np.asarray(1.0 - rate, dtype=x.data.dtype)
    out = Tensor(x.data * scale)
    tape = x.tape
    if tape is not None:
        xn = x.node

        def bwd(g, grads):
            _acc(grads, xn, g * scale)

        out.tape = tape
        out.node = tape._record(bwd)
    return out


def flatten(x: Tensor) -> Tensor:
    """[B,C,L] -> [B, C*L], row-major."""
    if x.data.ndim != 3:
        raise ValueError("flatten expects a [B,C,L] tensor")
    b_sz, ch, length = x.data.shape
    out = Tensor(x.data.reshape(b_sz, ch * length))
    tape = x.tape
    if tape is not None:
        xn = x.node

        def bwd(g, grads):
            _acc(grads, xn, g.reshape(b_sz, ch, length))

        out.tape = tape
        out.node = tape._record(bwd)
    return out


def weighted_sum(t: Tensor, weights) -> Tensor:
    """Scalar projection sum(t * weights) with constant weights.

    Reduces any tensor to a scalar, giving gradient checks a nontrivial
    adjoint to push through the op under test.
    """
    w = np.asarray(weights, dtype=t.data.dtype)
    if w.shape != t.data.shape:
        raise ValueError(
            f"weights shape {w.shape} != tensor shape {t.data.shape}")
    out = Tensor(np.array((t.data * w).sum()))
    tape = t.tape
    if tape is not None:
        tn = t.node

        def bwd(g, grads):
            _acc(grads, tn, g * w)

        out.tape = tape
        out.node = tape._record(bwd)
    return out


def softmax_cross_entropy(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of integer targets under softmax(logits).

    Stable log-sum-exp form; the softmax itself is only formed in the
    adjoint, never in the forward pass.
    """
    z = logits.data
    if z.ndim != 2:
        raise ValueError("logits must be [B, C]")
    b_sz, n_cls = z.shape
    tgt = np.asarray(targets)
    if tgt.shape != (b_sz,):
        raise ValueError(f"need {b_sz} targets, got shape {tgt.shape}")
    if tgt.min() < 0 or tgt.max() >= n_cls:
        raise ValueError(f"target index out of range [0, {n_cls})")
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    losses = lse - shifted[np.arange(b_sz), tgt]
    out = Tensor(np.asarray(losses.mean(), dtype=z.dtype))
    tape = logits.tape
    if tape is not None:
        ln = logits.node

        def bwd(g, grads):
            p = np.exp(shifted - lse[:, None])
            p[np.arange(b_sz), tgt] -= 1.0
            _acc(grads, ln, (float(g) / b_sz) * p)

        out.tape = tape
        out.node = tape._record(bwd)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    """Plain softmax over the last axis, for reporting probabilities."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def grad_check(
    f: Callable[[list[Tensor]], Tensor],
    params: Sequence[np.ndarray],
    eps: float = 1e-5,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` maps a list of tensors (one per entry of ``params``) to a
    scalar tensor and must be deterministic.  Relative error per
    coordinate is |analytic - numeric| / max(1e-12, |analytic| + |numeric|).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    work = [np.array(p, dtype=np.float64) for p in params]

    tape = Tape()
    tracked = [tape.watch(Tensor(p.copy())) for p in work]
    loss = f(tracked)
    if not np.isfinite(loss.data).all():
        raise NumericsError("objective is not finite")
    tape.backward(loss)
    analytic = [
        tape.grad(t) if tape.grad(t) is not None else np.zeros_like(w)
        for t, w in zip(tracked, work)
    ]

    def value() -> float:
        out = f([Tensor(p) for p in work])
        v = float(out.data)
        if not np.isfinite(v):
            raise NumericsError("objective is not finite")
        return v

    max_err = 0.0
    for arr, an in zip(work, analytic):
        flat = arr.reshape(-1)
        an_flat = np.asarray(an).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = value()
            flat[i] = orig - eps
            f_minus = value()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(1e-12, abs(an_flat[i]) + abs(numeric))
            max_err = max(max_err, abs(an_flat[i] - numeric) / denom)
    return max_err
