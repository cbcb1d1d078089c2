"""Backend selection for the hot loops.

The compiled extension is used when it imports; setting the environment
variable ``MINIMAX_LQ_PURE=1`` forces the numpy fallback. ``BACKEND`` names
the active choice.
"""

from __future__ import annotations

import os

from . import _kernels_py

PURE = _kernels_py

if os.environ.get("MINIMAX_LQ_PURE", "") not in ("", "0"):
    COMPILED = None
else:
    try:
        from . import _kernels as COMPILED
    except ImportError:
        COMPILED = None

_impl = COMPILED if COMPILED is not None else PURE
BACKEND = "cython" if COMPILED is not None else "python"
DIVERGENCE = _kernels_py.DIVERGENCE

rollout_batch = _impl.rollout_batch
best_assignment = _impl.best_assignment
