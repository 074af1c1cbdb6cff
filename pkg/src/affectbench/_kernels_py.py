"""Pure-numpy implementations of the hot convolution kernels.

These back :mod:`affectbench.kernels` when the compiled extension is not
available (or is disabled via ``AFFECTBENCH_BACKEND=python``).

The forward pass accumulates in a fixed canonical order -- output starts
at the bias, then adds input*weight terms with the channel index outer
and the tap index inner -- so it is bit-identical to a naive scalar
triple loop at the same precision.  The compiled backend follows the
same order.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"


def conv1d_forward(x_pad: np.ndarray, w: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Cross-correlate padded input [B,Cin,Lp] with w [Cout,Cin,K].

    Returns [B, Cout, Lp-K+1].  Padding is the caller's job.
    """
    b, cin, lp = x_pad.shape
    cout, _, k = w.shape
    lout = lp - k + 1
    out = np.empty((b, cout, lout), dtype=x_pad.dtype)
    out[:] = bias[None, :, None]
    for c in range(cin):
        for t in range(k):
            out += x_pad[:, None, c, t:t + lout] * w[None, :, c, t, None]
    return out


def conv1d_backward(x_pad: np.ndarray, w: np.ndarray, grad_out: np.ndarray):
    """Adjoints of conv1d_forward: (d_x_pad, d_w, d_bias)."""
    b, cin, lp = x_pad.shape
    cout, _, k = w.shape
    lout = lp - k + 1
    dx = np.zeros_like(x_pad)
    dw = np.empty_like(w)
    for t in range(k):
        window = x_pad[:, :, t:t + lout]
        # [Cout,Cin] contraction over batch and time
        dw[:, :, t] = np.tensordot(grad_out, window, axes=([0, 2], [0, 2]))
        # [B,Lout,Cin] -> [B,Cin,Lout]
        dx[:, :, t:t + lout] += np.tensordot(
            grad_out, w[:, :, t], axes=([1], [0])
        ).transpose(0, 2, 1)
    dbias = grad_out.sum(axis=(0, 2))
    return dx, dw, dbias
