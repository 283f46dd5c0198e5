"""Hot-kernel backend selection.

The compiled Cython core is preferred when the extension built; the numpy
fallback is bit-identical on every fixed-point path. Set SQJ2_PURE=1 to
force the fallback (benchmarks and the backend-equivalence tests use this).
"""

import os

from . import _numpy

if os.environ.get("SQJ2_PURE"):
    _impl = _numpy
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _numpy

BACKEND = _impl.BACKEND

conv_fixed = _impl.conv_fixed
conv_real = _impl.conv_real
maxpool_int8 = _impl.maxpool_int8
maxpool_real = _impl.maxpool_real
bank_pixel_fixed = _impl.bank_pixel_fixed


def backends():
    """All importable backends, for benchmarks and equivalence tests."""
    found = {"fallback": _numpy}
    try:
        from . import _core

        found["compiled"] = _core
    except ImportError:
        pass
    return found
