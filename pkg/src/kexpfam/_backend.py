"""Select the numeric core at import time.

The compiled extension is used when it imports; ``KEXPFAM_BACKEND=python``
forces the numpy fallback and ``KEXPFAM_BACKEND=cython`` makes a missing
extension an error.
"""

import os
import warnings

from . import _core_py

_requested = os.environ.get("KEXPFAM_BACKEND", "auto").lower()

if _requested == "python":
    core = _core_py
    BACKEND = "python"
else:
    try:
        from . import _core as core  # type: ignore[attr-defined]
        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise
        if _requested != "auto":
            warnings.warn(f"unknown KEXPFAM_BACKEND={_requested!r}; using auto")
        core = _core_py
        BACKEND = "python"

pair_terms = core.pair_terms
model_terms = core.model_terms


def get_core(name):
    """Return a specific backend module (``"python"`` or ``"cython"``)."""
    if name == "python":
        return _core_py
    if name == "cython":
        from . import _core
        return _core
    raise ValueError(f"unknown backend {name!r}")
