"""Numerical hot-path kernels with a compiled fast path.

The Cython extension (``_fast``) and the numpy fallback (``_numpy_impl``)
implement the same three functions; one backend is selected once at import.
Set FEDCONFORM_KERNELS=numpy or =compiled to force the choice (forcing
"compiled" raises if the extension was not built).
"""

import os

from fedconform._kernels import _numpy_impl

_requested = os.environ.get("FEDCONFORM_KERNELS", "").strip().lower()

if _requested == "numpy":
    _impl = _numpy_impl
elif _requested in ("", "compiled"):
    try:
        from fedconform._kernels import _fast as _impl
    except ImportError:
        if _requested == "compiled":
            raise ImportError(
                "FEDCONFORM_KERNELS=compiled but the extension is not built; "
                "reinstall with a C compiler available"
            ) from None
        _impl = _numpy_impl
else:
    raise ValueError(f"unrecognized FEDCONFORM_KERNELS value: {_requested!r}")

BACKEND = _impl.BACKEND
mlp_forward = _impl.mlp_forward
mlp_backward = _impl.mlp_backward
min_distances = _impl.min_distances
