"""Kernel selection.

The compiled extension is used when importable; setting the environment
variable ``REEBSIM_BACKEND=python`` forces the pure-Python fallback.
"""

import os

from . import _fallback

NAME = "python"
_impl = _fallback

if os.environ.get("REEBSIM_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _impl  # noqa: F811
        NAME = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _fallback

COMPILED = NAME == "cython"


def merge_trees(values, shape):
    return _impl.merge_trees(values, shape)


def sde_run(*args, num_threads=1, **kwargs):
    if COMPILED:
        return _impl.sde_run(*args, num_threads=num_threads, **kwargs)
    return _impl.sde_run(*args, **kwargs)


def get(name):
    """Return the implementation module for ``name`` ('python' or 'cython')."""
    if name == "python":
        return _fallback
    from . import _kernels
    return _kernels
