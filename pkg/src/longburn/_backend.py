"""Select the integration kernel implementation at import time.

The compiled extension is preferred; set ``LONGBURN_PURE_PYTHON=1`` to force
the numpy fallback (also used automatically when the extension is missing).
"""

import logging
import os

logger = logging.getLogger(__name__)

if os.environ.get("LONGBURN_PURE_PYTHON"):
    from . import _kernels_py as kernels

    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        from . import _kernels_py as kernels

        BACKEND = "python"
        logger.info("compiled kernels unavailable, using the numpy fallback")

integrate = kernels.integrate

__all__ = ["BACKEND", "integrate"]
