"""Kernel backend selection.

The hot per-sentence kernels (GRU recurrence and sampled-softmax scoring)
exist twice: a Cython extension (``_fast``) and a pure-NumPy fallback
(``numpy_ops``) with identical contracts.  The compiled one is preferred
when importable; set ``MMEMBED_BACKEND=numpy`` to force the fallback.
``benchmarks/bench_backends.py`` compares the two.
"""

import os

from . import numpy_ops

_impl = numpy_ops
if os.environ.get("MMEMBED_BACKEND", "").lower() not in ("numpy", "python"):
    try:
        from . import _fast as _impl  # noqa: F811
    except ImportError:
        pass

BACKEND = _impl.NAME
gru_forward = _impl.gru_forward
gru_backward = _impl.gru_backward
sampled_softmax_batch = _impl.sampled_softmax_batch


def available_backends():
    names = ["numpy"]
    try:
        from . import _fast  # noqa: F401
        names.append("cython")
    except ImportError:
        pass
    return names


def get_backend(name):
    """Fetch a backend module by name ("numpy" or "cython")."""
    if name == "numpy":
        return numpy_ops
    if name == "cython":
        from . import _fast
        return _fast
    raise ValueError(f"unknown backend {name!r}")
