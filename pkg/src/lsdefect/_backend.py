"""Kernel backend selection: compiled extension if importable, numpy otherwise.

Set ``LSDEFECT_PURE_PYTHON=1`` to force the numpy fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

python_impl = _pykernels
compiled_impl = None

if os.environ.get("LSDEFECT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled_impl  # type: ignore[no-redef]
    except ImportError:  # pragma: no cover - depends on build
        compiled_impl = None

impl = compiled_impl if compiled_impl is not None else python_impl
BACKEND = "cython" if compiled_impl is not None else "python"
