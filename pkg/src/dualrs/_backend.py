"""Backend selection for the hot kernels.

Set ``DUALRS_NUMBA=0`` to force the pure-numpy path.  ``DUALRS_THREADS``
caps the number of numba worker threads.
"""

import os

_flag = os.environ.get("DUALRS_NUMBA", "1").strip().lower()
NUMBA_REQUESTED = _flag not in ("0", "false", "no", "off")

try:
    import numba
    from numba import njit, prange

    NUMBA_AVAILABLE = True
    # deterministic, dependency-free pool; avoids probing an outdated TBB
    numba.config.THREADING_LAYER = os.environ.get("NUMBA_THREADING_LAYER", "workqueue")
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f

    prange = range

USE_NUMBA = NUMBA_AVAILABLE and NUMBA_REQUESTED


def _apply_thread_cap():
    cap = os.environ.get("DUALRS_THREADS")
    if not cap or not NUMBA_AVAILABLE:
        return
    try:
        n = int(cap)
    except ValueError:
        return
    if n >= 1:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


_apply_thread_cap()


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
