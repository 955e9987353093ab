"""Kernel backend selection.

The compiled ``_kernels`` extension is used when it is importable; set
``SENG_PURE_PYTHON=1`` to force the numpy fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("SENG_PURE_PYTHON") != "1":
    try:
        from . import _kernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py

im2col = _impl.im2col
col2im = _impl.col2im
factor_gram = _impl.factor_gram
factor_dot = _impl.factor_dot

__all__ = ["BACKEND", "im2col", "col2im", "factor_gram", "factor_dot"]
