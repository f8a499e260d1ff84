"""Kernel backend selection: compiled extension when importable, else numpy.

Set ``CHANINV_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("CHANINV_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback

pair_excursions = _impl.pair_excursions
greedy_cover = _impl.greedy_cover
propagate_responses = _impl.propagate_responses
response_at = _impl.response_at
candidate_excursions = _impl.candidate_excursions
track_signals = _impl.track_signals


def c64(a):
    return np.ascontiguousarray(a, dtype=np.float64)

