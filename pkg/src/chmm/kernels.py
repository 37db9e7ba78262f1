"""Kernel backend selection.

The compiled extension is used when it imports cleanly; otherwise the NumPy
fallback is used. Set ``CHMM_KERNELS=python`` to force the fallback.
"""

import importlib
import os
from types import ModuleType

_BACKENDS = {"cython": "chmm._ckernels", "python": "chmm._pykernels"}


def load_backend(name: str) -> ModuleType:
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; expected one of {sorted(_BACKENDS)}")
    return importlib.import_module(_BACKENDS[name])


def available_backends() -> list[str]:
    names = []
    for name in _BACKENDS:
        try:
            load_backend(name)
        except ImportError:
            continue
        names.append(name)
    return names


def _select() -> tuple[str, ModuleType]:
    forced = os.environ.get("CHMM_KERNELS", "").strip().lower()
    if forced:
        return forced, load_backend(forced)
    try:
        return "cython", load_backend("cython")
    except ImportError:
        return "python", load_backend("python")


BACKEND, impl = _select()


def use_backend(name: str) -> None:
    """Switch the process-wide backend (used by tests and the benchmark)."""
    global BACKEND, impl
    impl = load_backend(name)
    BACKEND = name
