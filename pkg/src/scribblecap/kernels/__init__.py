"""Kernel backend selection: compiled extension when available, numpy otherwise.

Set ``SCRIBBLECAP_KERNELS=python`` or ``=compiled`` to force a backend
(``compiled`` raises if the extension is missing); the default ``auto``
prefers the extension. ``BACKEND`` names the active one.
"""

from __future__ import annotations

import os

from . import _numpy

_requested = os.environ.get("SCRIBBLECAP_KERNELS", "auto")
if _requested not in ("auto", "compiled", "python"):
    raise RuntimeError(f"SCRIBBLECAP_KERNELS must be auto|compiled|python, got {_requested!r}")

_impl = _numpy
BACKEND = "python"
if _requested in ("auto", "compiled"):
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise

layernorm_forward = _impl.layernorm_forward
layernorm_backward = _impl.layernorm_backward
softmax_rows = _impl.softmax_rows
softmax_rows_backward = _impl.softmax_rows_backward
gelu_forward = _impl.gelu_forward
gelu_backward = _impl.gelu_backward
cross_entropy_rows = _impl.cross_entropy_rows
cross_entropy_backward = _impl.cross_entropy_backward
adam_update = _impl.adam_update


def backend_name() -> str:
    return BACKEND


def available_backends() -> dict[str, object]:
    """Importable kernel modules keyed by backend name (for tests/benchmarks)."""
    found: dict[str, object] = {"python": _numpy}
    try:
        from . import _core

        found["compiled"] = _core
    except ImportError:
        pass
    return found
