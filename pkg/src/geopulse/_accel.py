# Numba if available and not disabled, otherwise the pure-numpy kernels.
#
# Set GEOPULSE_NO_NUMBA=1 to force the numpy path (useful for debugging and
# for the kernel benchmark, which imports both implementations directly).
import logging
import os

logger = logging.getLogger(__name__)

_DISABLED = os.environ.get("GEOPULSE_NO_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        """Null decorator used when numba is not importable."""
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(func):
            return func

        return wrap

    logger.debug("numba not importable; using numpy kernels")

USE_NUMBA = HAVE_NUMBA and not _DISABLED
