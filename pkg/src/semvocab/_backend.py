"""Backend selection for the numeric kernels.

Set ``SEMVOCAB_DISABLE_NUMBA=1`` before import to force the pure-numpy path.
If numba cannot be imported the numpy path is used automatically.
"""

import importlib.util
import os

_FLAG = "SEMVOCAB_DISABLE_NUMBA"


def _env_disabled():
    return os.environ.get(_FLAG, "").strip().lower() in ("1", "true", "yes", "on")


HAVE_NUMBA = importlib.util.find_spec("numba") is not None

USE_NUMBA = HAVE_NUMBA and not _env_disabled()


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity decorator otherwise.

    Kernels are always compiled when numba is present (so both paths can be
    compared in one process); ``USE_NUMBA`` only picks which one is exported.
    """
    if HAVE_NUMBA:
        import numba

        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
