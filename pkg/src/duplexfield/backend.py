"""Kernel backend selection.

Hot inner loops (ray casting, convolution forward/backward) exist twice:
a numba ``@njit`` version and a pure-numpy fallback. The active backend is
chosen by the ``DUPLEXFIELD_BACKEND`` environment variable (``numba`` or
``numpy``) and can be switched at runtime with :func:`set_backend`.
Dispatch happens at call time, so switching never requires a re-import.
"""

import os

VALID_BACKENDS = ("numba", "numpy")

_backend = os.environ.get("DUPLEXFIELD_BACKEND", "numba").strip().lower()
if _backend not in VALID_BACKENDS:
    raise ValueError(
        f"DUPLEXFIELD_BACKEND must be one of {VALID_BACKENDS}, got {_backend!r}"
    )

if _backend == "numba":
    try:
        import numba  # noqa: F401
    except ImportError:
        _backend = "numpy"


def current_backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    name = name.strip().lower()
    if name not in VALID_BACKENDS:
        raise ValueError(f"backend must be one of {VALID_BACKENDS}, got {name!r}")
    if name == "numba":
        import numba  # noqa: F401
    _backend = name


def use_numba() -> bool:
    return _backend == "numba"


def set_num_threads(n: int) -> None:
    """Cap worker parallelism; 1 guarantees bit-stable runs."""
    if n < 1:
        raise ValueError("thread count must be >= 1")
    if _backend == "numba":
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def num_threads() -> int:
    if _backend == "numba":
        import numba

        return numba.get_num_threads()
    return 1
