"""Select the AES kernel backend at import time.

The Cython extension is preferred.  Set ``MAGICPAIR_PURE_PYTHON=1`` to force
the fallback.
"""

import os

try:
    if os.environ.get("MAGICPAIR_PURE_PYTHON"):
        raise ImportError("pure-Python backend requested")
    from magicpair import _speedups as _impl
    BACKEND = "cython"
except ImportError:
    from magicpair import _fallback as _impl
    BACKEND = "python"

encrypt_block = _impl.encrypt_block
encrypt_blocks = _impl.encrypt_blocks
ratchet = _impl.ratchet

__all__ = ["BACKEND", "encrypt_block", "encrypt_blocks", "ratchet"]
