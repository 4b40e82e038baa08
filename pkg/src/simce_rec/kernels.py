"""Kernel dispatch: the compiled extension when it imports, numpy otherwise.

Set ``SIMCE_REC_PURE_PYTHON=1`` before import to force the numpy path.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("SIMCE_REC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        pass

gather_dot = _impl.gather_dot
gather_dot_multi = _impl.gather_dot_multi
scatter_outer = _impl.scatter_outer
csr_matmul = _impl.csr_matmul
observed_mask = _impl.observed_mask


def available_backends():
    """Return {name: module} for every backend importable in this process."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels

        out["compiled"] = _kernels
    except ImportError:
        pass
    return out
