"""Backend selection for the numerical kernels.

The compiled Jacobi sweep is used when the extension was built; otherwise the
pure-Python implementation is imported. Set ``RP1_PURE_PYTHON=1`` to force the
fallback. The Gram product always goes through numpy (BLAS beats a
hand-written loop there).
"""
import os

from rp1._kernels_py import gram

if os.environ.get("RP1_PURE_PYTHON", "") not in ("", "0"):
    from rp1._kernels_py import jacobi_eigh

    BACKEND = "python"
else:
    try:
        from rp1._kernels import jacobi_eigh

        BACKEND = "compiled"
    except ImportError:
        from rp1._kernels_py import jacobi_eigh

        BACKEND = "python"

__all__ = ["BACKEND", "gram", "jacobi_eigh"]
