"""Hot numeric kernels, in two interchangeable backends.

``numba_backend`` holds @njit-compiled loops for the inner-loop work that
dominates training time (gelu, layer norm, softmax, cross entropy,
embedding scatter-add, AdamW updates).  ``numpy_backend`` is a pure-numpy
twin used as the reference implementation and as a fallback.

Selection: set ``SRSADAPT_BACKEND=numpy`` or ``SRSADAPT_BACKEND=numba``
before import.  Default is numba when importable, numpy otherwise.
``benchmarks/bench_kernels.py`` compares the two.
"""

import os

from . import numpy_backend

_BACKENDS = {"numpy": numpy_backend}

try:
    from . import numba_backend

    _BACKENDS["numba"] = numba_backend
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba_backend = None

KERNEL_NAMES = (
    "gelu_forward",
    "gelu_backward",
    "softmax_rows",
    "softmax_backward_rows",
    "layer_norm_forward",
    "layer_norm_backward",
    "cross_entropy_forward",
    "cross_entropy_backward",
    "embedding_scatter_add",
    "adamw_update",
)


def _default_backend() -> str:
    env = os.environ.get("SRSADAPT_BACKEND", "").strip().lower()
    if env:
        if env not in _BACKENDS:
            raise RuntimeError(
                f"SRSADAPT_BACKEND={env!r} is not available; "
                f"choose one of {sorted(_BACKENDS)}"
            )
        return env
    return "numba" if "numba" in _BACKENDS else "numpy"


_active_name = _default_backend()
_active = _BACKENDS[_active_name]


def backend_name() -> str:
    """Name of the backend currently serving the kernel calls."""
    return _active_name


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def use_backend(name: str) -> None:
    """Switch kernel backend at runtime (mainly for tests and benchmarks)."""
    global _active, _active_name
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; choose one of {sorted(_BACKENDS)}")
    _active_name = name
    _active = _BACKENDS[name]


def _proxy(name):
    def call(*args, **kwargs):
        return getattr(_active, name)(*args, **kwargs)

    call.__name__ = name
    call.__doc__ = getattr(numpy_backend, name).__doc__
    return call


gelu_forward = _proxy("gelu_forward")
gelu_backward = _proxy("gelu_backward")
softmax_rows = _proxy("softmax_rows")
softmax_backward_rows = _proxy("softmax_backward_rows")
layer_norm_forward = _proxy("layer_norm_forward")
layer_norm_backward = _proxy("layer_norm_backward")
cross_entropy_forward = _proxy("cross_entropy_forward")
cross_entropy_backward = _proxy("cross_entropy_backward")
embedding_scatter_add = _proxy("embedding_scatter_add")
adamw_update = _proxy("adamw_update")
