"""Selects the compiled scoring core when built, else the numpy fallback.

Set ``RDESIGN_PURE_PYTHON=1`` to force the fallback.
"""

import os

if os.environ.get("RDESIGN_PURE_PYTHON", "") not in ("", "0"):
    from . import _scoring_py as scoring

    BACKEND = "python"
else:
    try:
        from . import _scoring as scoring

        BACKEND = "cython"
    except ImportError:
        from . import _scoring_py as scoring

        BACKEND = "python"

__all__ = ["scoring", "BACKEND"]
