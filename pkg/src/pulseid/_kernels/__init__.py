"""Convolution kernels with a compiled fast path.

The Cython extension ``_convcy`` is preferred when it was built; otherwise
the numpy implementation is used. Set ``PULSEID_KERNELS=numpy`` or
``PULSEID_KERNELS=cython`` to force a backend (forcing cython raises if the
extension is missing). ``python -m benchmarks.bench_kernels`` in the source
tree compares the two.
"""

import os

from . import _convnp

_forced = os.environ.get("PULSEID_KERNELS", "").strip().lower()

if _forced == "numpy":
    _impl = _convnp
else:
    try:
        from . import _convcy as _impl  # type: ignore[no-redef]
    except ImportError:
        if _forced == "cython":
            raise
        _impl = _convnp

BACKEND = _impl.BACKEND_NAME

conv1d_fwd = _impl.conv1d_fwd
conv1d_grad_k = _impl.conv1d_grad_k
conv2d_fwd = _impl.conv2d_fwd
conv2d_grad_k = _impl.conv2d_grad_k
