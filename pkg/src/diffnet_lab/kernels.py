"""Kernel backend selection.

The compiled extension is used when importable; ``DIFFNET_KERNELS=python``
forces the numpy fallback and ``DIFFNET_KERNELS=compiled`` makes a missing
extension an error.
"""

import os

from . import _pykernels

_choice = os.environ.get("DIFFNET_KERNELS", "auto").lower()
if _choice not in ("auto", "python", "compiled"):
    raise ImportError(f"DIFFNET_KERNELS must be auto, python or compiled, got {_choice!r}")

_compiled = None
if _choice != "python":
    try:
        from . import _ckernels as _compiled
    except ImportError:
        if _choice == "compiled":
            raise

BACKEND = "compiled" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _pykernels

stencil_forward = _impl.stencil_forward
stencil_backward = _impl.stencil_backward
im2col3x3 = _impl.im2col3x3
col2im3x3 = _impl.col2im3x3

# Not hot; always numpy.
shift = _pykernels.shift
shift_adjoint = _pykernels.shift_adjoint
OFFSETS = _pykernels.OFFSETS


def backends():
    """Map of available backend name -> kernel module (for tests and benchmarks)."""
    out = {"python": _pykernels}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out
