"""Learned non-stationary diffusion filters for image inversion.

Submodules: ``grid`` (stencils), ``diffusion`` (forward models), ``inverse``
(analytic inversion and filter decomposition), ``autodiff`` (reverse-mode
engine), ``model`` (linear network and DiffNet), ``data``, ``train`` and
``cli``. Hot loops live in ``kernels``, which picks the compiled extension
when it is importable and the numpy reference otherwise.
"""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
