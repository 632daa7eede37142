"""Kernel dispatch: compiled Cython implementations when available,
numpy fallback otherwise.

``BACKEND`` records which one is active; both expose the same functions
(``causal_conv``, ``ar_drive``, ``ar_drive_batch``) with identical
contracts, and the test suite cross-checks them when both import.
"""

from arfilt._kernels import _py_impl

try:  # pragma: no cover - depends on whether the extension was built
    from arfilt._kernels import _cy_impl as _impl

    BACKEND = "cython"
except ImportError:  # pragma: no cover
    _impl = _py_impl
    BACKEND = "python"

causal_conv = _impl.causal_conv
ar_drive = _impl.ar_drive
ar_drive_batch = _impl.ar_drive_batch

__all__ = ["BACKEND", "causal_conv", "ar_drive", "ar_drive_batch"]
