"""Kernel backend selection.

Imports the compiled extension when present, otherwise falls back to the
numpy implementations. PANORANK_BACKEND=python forces the fallback;
PANORANK_BACKEND=compiled makes a missing extension a hard error.
"""

from __future__ import annotations

import os

from . import _kernels_py

_forced = os.environ.get("PANORANK_BACKEND", "").lower()

BACKEND = "python"
_impl = _kernels_py

if _forced != "python":
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]

        _impl = _compiled
        BACKEND = "compiled"
    except ImportError:
        if _forced == "compiled":
            raise

conv2d_forward = _impl.conv2d_forward
conv2d_grad_weights = _impl.conv2d_grad_weights
conv2d_grad_input = _impl.conv2d_grad_input
label_components = _impl.label_components
