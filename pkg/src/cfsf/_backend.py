"""Kernel selection: compiled extension when importable, numpy otherwise.

Set ``CFSF_BACKEND=python`` to force the fallback.
"""

import os
import warnings

from cfsf import _fallback

if os.environ.get("CFSF_BACKEND", "").lower() == "python":
    kernels = _fallback
    NAME = "python"
else:
    try:
        from cfsf import _kernels as kernels
        NAME = "compiled"
    except ImportError:
        warnings.warn("cfsf: compiled kernels unavailable, using the numpy fallback")
        kernels = _fallback
        NAME = "python"


def available():
    """Names of the backends importable in this environment."""
    names = ["python"]
    try:
        from cfsf import _kernels  # noqa: F401
        names.insert(0, "compiled")
    except ImportError:
        pass
    return names


def get(name):
    if name == "python":
        return _fallback
    if name == "compiled":
        from cfsf import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")
