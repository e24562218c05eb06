"""Backend selection for the hot kernels.

Every kernel in :mod:`epde.kernels` exists twice: a numba ``@njit`` loop
version and a vectorized pure-numpy version.  Which one runs is decided by
the ``EPDE_DISABLE_NUMBA`` environment variable at import time, and can be
switched at runtime with :func:`set_backend` / :func:`use_backend`.
"""
import contextlib
import os

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

ENV_FLAG = "EPDE_DISABLE_NUMBA"


def _env_disabled():
    return os.environ.get(ENV_FLAG, "").strip().lower() in ("1", "true", "yes", "on")


_backend = "numba" if (HAVE_NUMBA and not _env_disabled()) else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` with ``cache=True``; identity decorator without numba."""
    if not HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)


def backend():
    return _backend


def set_backend(name):
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _backend = name


@contextlib.contextmanager
def use_backend(name):
    prev = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


def set_threads(n):
    """Cap numba worker threads (BLAS threads are capped via env by the CLI)."""
    if HAVE_NUMBA and n:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
