"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise, or when the
environment sets ``CLOUDFILL_PURE_PYTHON=1``, the numpy implementations are
used. Both expose the same functions.
"""

import os
import sys
import warnings
from contextlib import contextmanager

from . import _pykernels

python_backend = _pykernels
compiled_backend = None
try:
    from . import _ckernels as compiled_backend
except ImportError:  # pragma: no cover - depends on the build
    pass

if os.environ.get("CLOUDFILL_PURE_PYTHON", "") not in ("", "0"):
    active = _pykernels
elif compiled_backend is None:  # pragma: no cover - depends on the build
    warnings.warn(
        "cloudfill compiled kernels not built; using the numpy fallback",
        RuntimeWarning,
        stacklevel=2,
    )
    active = _pykernels
else:
    active = compiled_backend

BACKEND = active.BACKEND
WLR_REGRESSION = _pykernels.WLR_REGRESSION
WLR_STARVED = _pykernels.WLR_STARVED
WLR_DEGENERATE = _pykernels.WLR_DEGENERATE
WLR_EMPTY = _pykernels.WLR_EMPTY


@contextmanager
def use_backend(backend):
    """Temporarily route every kernel call to ``backend`` (not thread-safe)."""
    module = sys.modules[__name__]
    saved = module.active
    module.active = backend
    try:
        yield backend
    finally:
        module.active = saved
