"""Backend selection: compiled extension when available, pure Python otherwise.

Set NTKLAB_BACKEND=python to force the pure backend (useful for parity
checks and debugging). Both backends expose the same functions and return
bitwise identical results; see tests/test_backends.py.
"""

import os

if os.environ.get("NTKLAB_BACKEND", "").lower() == "python":
    from ntklab import _purepy as ops
else:
    try:
        from ntklab import _core as ops  # type: ignore[no-redef]
    except ImportError:
        from ntklab import _purepy as ops  # type: ignore[no-redef]

COMPILED = bool(ops.COMPILED)
NAME = "compiled" if COMPILED else "python"
