"""Hot-loop dispatch: compiled extension when built, numpy fallback otherwise.

Set ``SELFCONTACT_PURE_PYTHON=1`` to force the fallback (used by the equivalence
tests and the benchmark).
"""

import os

import numpy as np

from . import _kernels_py

_ext = None
if not os.environ.get("SELFCONTACT_PURE_PYTHON"):
    try:
        from . import _kernels as _ext
    except ImportError:  # extension not compiled
        _ext = None

COMPILED = _ext is not None
_impl = _ext if COMPILED else _kernels_py


def sliding_median(values, half):
    return np.asarray(_impl.sliding_median(np.ascontiguousarray(values, dtype=np.float64), int(half)))


def closest_pairs_by_region(hand, targets, labels, n_regions, z_weight):
    return _impl.closest_pairs_by_region(
        np.ascontiguousarray(hand, dtype=np.float64),
        np.ascontiguousarray(targets, dtype=np.float64),
        np.ascontiguousarray(labels, dtype=np.int64),
        int(n_regions),
        float(z_weight),
    )


def fk_chain(local, parents, offsets, root_shift):
    return _impl.fk_chain(
        np.ascontiguousarray(local, dtype=np.float64),
        np.ascontiguousarray(parents, dtype=np.int64),
        np.ascontiguousarray(offsets, dtype=np.float64),
        np.ascontiguousarray(root_shift, dtype=np.float64),
    )
