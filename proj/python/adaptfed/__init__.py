"""Python interface to the adaptfed simulation core.

The compiled extension normally lives next to this file (installed wheels).
For in-tree test runs the build directory is passed via ADAPTFED_CORE_DIR.
"""

import os
import sys

try:
    from ._core import *  # noqa: F401,F403
    from . import _core as _core_module
except ImportError:
    _core_dir = os.environ.get("ADAPTFED_CORE_DIR")
    if not _core_dir:
        raise
    if _core_dir not in sys.path:
        sys.path.insert(0, _core_dir)
    import _core as _core_module
    _names = [n for n in dir(_core_module) if not n.startswith("_")]
    globals().update({n: getattr(_core_module, n) for n in _names})

__all__ = [n for n in dir(_core_module) if not n.startswith("_")]
