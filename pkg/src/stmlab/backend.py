"""Kernel backend selection.

The hot loops (depth-wise convolution, patch extraction, bilinear
gather/scatter) exist twice: once as numba @njit kernels and once as pure
numpy. `STMLAB_BACKEND` picks the path:

    auto   - numba if it imports, numpy otherwise (default)
    numba  - require numba, fail loudly if missing
    numpy  - force the pure-numpy fallback

Resolution happens once at import; `benchmarks/bench_kernels.py` imports
both implementations directly to compare them.
"""

import os

_ENV_VAR = "STMLAB_BACKEND"
_VALID = ("auto", "numba", "numpy")


def requested_backend() -> str:
    value = os.environ.get(_ENV_VAR, "auto").lower()
    if value not in _VALID:
        raise ValueError(
            f"{_ENV_VAR}={value!r} is not valid; expected one of {_VALID}"
        )
    return value


def resolve_backend() -> str:
    """Name of the kernel implementation that will actually be used."""
    choice = requested_backend()
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise ImportError(
                f"{_ENV_VAR}=numba but numba is not installed"
            ) from None
        return "numpy"
    return "numba"
