"""Select the numerical core: compiled extension if importable, else NumPy.

Set ``QUANTCTL_BACKEND=python`` to force the pure-Python fallback.
"""

import os

from quantctl import _pycore

if os.environ.get("QUANTCTL_BACKEND", "").lower() == "python":
    core = _pycore
    BACKEND = "python"
else:
    try:
        from quantctl import _core as core
        BACKEND = "compiled"
    except ImportError:  # extension not built
        core = _pycore
        BACKEND = "python"

__all__ = ["core", "BACKEND"]
