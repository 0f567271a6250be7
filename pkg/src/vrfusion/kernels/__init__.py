"""Hot inner loops, with a numba build and a pure-numpy fallback.

The backend is picked once at import from ``VRFUSION_BACKEND`` (``numba`` or
``numpy``). Without the variable, numba is used when it imports cleanly.
Both backends are always reachable through :func:`get_backend` so tests and
benchmarks can compare them in one process.
"""

import importlib
import logging
import os
from types import ModuleType

from . import _numpy

log = logging.getLogger(__name__)

OP_MIN, OP_MAX, OP_SUM, OP_MEAN = _numpy.OP_MIN, _numpy.OP_MAX, _numpy.OP_SUM, _numpy.OP_MEAN
OPS = {"min": OP_MIN, "max": OP_MAX, "sum": OP_SUM, "mean": OP_MEAN}

ENV_VAR = "VRFUSION_BACKEND"
BACKENDS = ("numba", "numpy")


def _numba_module():
    try:
        return importlib.import_module("._numba", __name__)
    except ImportError as exc:
        log.warning("numba backend unavailable (%s); using numpy", exc)
        return None


def get_backend(name: str) -> ModuleType:
    if name == "numpy":
        return _numpy
    if name == "numba":
        mod = _numba_module()
        if mod is None:
            raise ImportError("numba backend requested but numba is not importable")
        return mod
    raise ValueError(f"unknown backend {name!r}; expected one of {BACKENDS}")


def _select():
    requested = os.environ.get(ENV_VAR, "").strip().lower()
    if requested == "numpy":
        return "numpy", _numpy
    if requested not in ("", "numba"):
        raise ValueError(f"{ENV_VAR}={requested!r}; expected one of {BACKENDS}")
    mod = _numba_module()
    if mod is None:
        if requested == "numba":
            raise ImportError(f"{ENV_VAR}=numba but numba is not importable")
        return "numpy", _numpy
    return "numba", mod


BACKEND, _impl = _select()

first_occurrence_ids = _impl.first_occurrence_ids
segment_reduce = _impl.segment_reduce
bilinear_sample = _impl.bilinear_sample
roi_align = _impl.roi_align
rect_multiplicity = _impl.rect_multiplicity
