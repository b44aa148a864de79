"""Kernel dispatch: compiled Cython when importable, numpy otherwise.

Set ``DFF_PURE_PYTHON=1`` before import to force the fallback.
"""
import os

from . import _pykernels as python

compiled = None
if os.environ.get("DFF_PURE_PYTHON") != "1":
    try:
        from . import _kernels as compiled
    except ImportError:  # extension not built
        compiled = None

BACKEND = "cython" if compiled is not None else "python"
_impl = compiled if compiled is not None else python

dag_argmin_batch = _impl.dag_argmin_batch
best_split = _impl.best_split
project_simplex = _impl.project_simplex
pga_simplex = _impl.pga_simplex

__all__ = ["BACKEND", "compiled", "python", "dag_argmin_batch", "best_split", "project_simplex", "pga_simplex"]
