# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution kernels.

The forward accumulation order matches the numpy fallback exactly:
each output element starts at the bias, then adds input*weight terms
with the channel index outer and the tap index inner, one rounding per
add.  Compiled with contraction disabled (no FMA), the result is
bit-identical to the fallback at float64.

Non-float64 inputs are delegated to the fallback.
"""

import numpy as np

from affectbench import _kernels_py

BACKEND_NAME = "cython"


def conv1d_forward(x_pad, w, bias):
    """Cross-correlate padded input [B,Cin,Lp] with w [Cout,Cin,K].

    Returns [B, Cout, Lp-K+1].  Padding is the caller's job.
    """
    if (x_pad.dtype != np.float64 or w.dtype != np.float64
            or bias.dtype != np.float64):
        return _kernels_py.conv1d_forward(x_pad, w, bias)
    return _forward_f64(np.ascontiguousarray(x_pad),
                        np.ascontiguousarray(w),
                        np.ascontiguousarray(bias))


def conv1d_backward(x_pad, w, grad_out):
    """Adjoints of conv1d_forward: (d_x_pad, d_w, d_bias)."""
    if (x_pad.dtype != np.float64 or w.dtype != np.float64
            or grad_out.dtype != np.float64):
        return _kernels_py.conv1d_backward(x_pad, w, grad_out)
    return _backward_f64(np.ascontiguousarray(x_pad),
                         np.ascontiguousarray(w),
                         np.ascontiguousarray(grad_out))


def _forward_f64(double[:, :, ::1] x_pad, double[:, :, ::1] w,
                 double[::1] bias):
    cdef Py_ssize_t bn = x_pad.shape[0]
    cdef Py_ssize_t cin = x_pad.shape[1]
    cdef Py_ssize_t lp = x_pad.shape[2]
    cdef Py_ssize_t cout = w.shape[0]
    cdef Py_ssize_t k = w.shape[2]
    cdef Py_ssize_t lout = lp - k + 1
    out_arr = np.empty((bn, cout, lout), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, o, l, c, t
    cdef double acc
    for b in range(bn):
        for o in range(cout):
            for l in range(lout):
                acc = bias[o]
                for c in range(cin):
                    for t in range(k):
                        acc = acc + x_pad[b, c, t + l] * w[o, c, t]
                out[b, o, l] = acc
    return out_arr


def _backward_f64(double[:, :, ::1] x_pad, double[:, :, ::1] w,
                  double[:, :, ::1] grad_out):
    cdef Py_ssize_t bn = x_pad.shape[0]
    cdef Py_ssize_t cin = x_pad.shape[1]
    cdef Py_ssize_t lp = x_pad.shape[2]
    cdef Py_ssize_t cout = w.shape[0]
    cdef Py_ssize_t k = w.shape[2]
    cdef Py_ssize_t lout = lp - k + 1
    dx_arr = np.zeros((bn, cin, lp), dtype=np.float64)
    dw_arr = np.zeros((cout, cin, k), dtype=np.float64)
    dbias_arr = np.zeros(cout, dtype=np.float64)
    cdef double[:, :, ::1] dx = dx_arr
    cdef double[:, :, ::1] dw = dw_arr
    cdef double[::1] dbias = dbias_arr
    cdef Py_ssize_t b, o, l, c, t
    cdef double wv, acc
    # Unit-stride inner loops over l: the dx update is a vectorizable
    # axpy and the dw term a contiguous dot product.
    for b in range(bn):
        for o in range(cout):
            acc = 0.0
            for l in range(lout):
                acc += grad_out[b, o, l]
            dbias[o] += acc
            for c in range(cin):
                for t in range(k):
                    wv = w[o, c, t]
                    for l in range(lout):
                        dx[b, c, t + l] += grad_out[b, o, l] * wv
                    acc = 0.0
                    for l in range(lout):
                        acc += grad_out[b, o, l] * x_pad[b, c, t + l]
                    dw[o, c, t] += acc
    return dx_arr, dw_arr, dbias_arr
