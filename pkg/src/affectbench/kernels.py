"""Backend selection for the hot convolution kernels.

The compiled Cython extension is preferred when importable; otherwise
the numpy fallback in :mod:`affectbench._kernels_py` is used.  Set
``AFFECTBENCH_BACKEND=python`` to force the fallback, or
``AFFECTBENCH_BACKEND=cython`` to require the extension (ImportError if
it is missing).  Both backends implement the same canonical
accumulation order, so forward results agree bitwise at a given
precision.
"""

from __future__ import annotations

import os

from affectbench import _kernels_py

_requested = os.environ.get("AFFECTBENCH_BACKEND", "auto").lower()

if _requested == "python":
    _impl = _kernels_py
elif _requested == "cython":
    from affectbench import _kernels as _impl  # noqa: F401
elif _requested == "auto":
    try:
        from affectbench import _kernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_py
else:
    raise ValueError(
        f"AFFECTBENCH_BACKEND must be auto, python or cython, got {_requested!r}"
    )

conv1d_forward = _impl.conv1d_forward
conv1d_backward = _impl.conv1d_backward


def active_backend() -> str:
    """Name of the kernel backend in use: 'python' or 'cython'."""
    return _impl.BACKEND_NAME
