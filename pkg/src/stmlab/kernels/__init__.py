"""Hot-loop kernels with a numba fast path and a numpy fallback.

`ACTIVE_BACKEND` records which implementation won; the choice is made once
at import time from the STMLAB_BACKEND environment variable (see
`stmlab.backend`).
"""

from stmlab.backend import resolve_backend

ACTIVE_BACKEND = resolve_backend()

if ACTIVE_BACKEND == "numba":
    from stmlab.kernels.numba_impl import (
        bilinear_gather,
        bilinear_scatter,
        depthwise_conv2d_bwd,
        depthwise_conv2d_fwd,
        extract_patches_bwd,
        extract_patches_fwd,
    )
else:
    from stmlab.kernels.numpy_impl import (
        bilinear_gather,
        bilinear_scatter,
        depthwise_conv2d_bwd,
        depthwise_conv2d_fwd,
        extract_patches_bwd,
        extract_patches_fwd,
    )

__all__ = [
    "ACTIVE_BACKEND",
    "bilinear_gather",
    "bilinear_scatter",
    "depthwise_conv2d_bwd",
    "depthwise_conv2d_fwd",
    "extract_patches_bwd",
    "extract_patches_fwd",
]
