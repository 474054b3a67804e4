"""Backend selection for the hot voxel / graph kernels.

Every hot kernel exists twice: a numba ``@njit`` version and a pure numpy
(or numpy + scipy) version. The default comes from the ``SKELPORE_BACKEND``
environment variable (``numba`` or ``numpy``); when unset, numba is used if it
imports. Public functions also take an explicit ``backend=`` override, which
is what the tests and the benchmark use to compare both paths.
"""

from __future__ import annotations

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is optional
    numba = None
    HAVE_NUMBA = False

BACKENDS = ("numba", "numpy")


def _default_backend() -> str:
    env = os.environ.get("SKELPORE_BACKEND", "").strip().lower()
    if env:
        if env not in BACKENDS:
            raise ValueError(f"SKELPORE_BACKEND must be one of {BACKENDS}, got {env!r}")
        return env
    return "numba" if HAVE_NUMBA else "numpy"


DEFAULT_BACKEND = _default_backend()


def resolve_backend(backend: str | None = None) -> str:
    """Return the backend to use, falling back to numpy if numba is missing."""
    name = DEFAULT_BACKEND if backend is None else backend.lower()
    if name not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}, got {backend!r}")
    if name == "numba" and not HAVE_NUMBA:
        return "numpy"
    return name


def njit(func):
    """Compile ``func`` with numba when available; otherwise return it unchanged."""
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True, nogil=True)(func)


def set_threads(n: int | None) -> None:
    if n and HAVE_NUMBA:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
