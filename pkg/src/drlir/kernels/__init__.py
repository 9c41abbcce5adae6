"""Hot-kernel backend selection: compiled extension when built, numpy fallback otherwise.

Set ``DRLIR_PURE=1`` to force the fallback (useful for parity checks and
benchmarking). The active backend is reported by :data:`BACKEND`.
"""

from __future__ import annotations

import os

from drlir.kernels import _pure

try:
    from drlir.kernels import _native

    HAVE_NATIVE = True
except ImportError:  # pragma: no cover - depends on build environment
    _native = None
    HAVE_NATIVE = False

_FORCE_PURE = os.environ.get("DRLIR_PURE", "") not in ("", "0")

_impl = _native if (HAVE_NATIVE and not _FORCE_PURE) else _pure

BACKEND: str = _impl.backend_name()

pmf_epoch = _impl.pmf_epoch
forest_collect = _impl.forest_collect
