"""Kernel backend selection.

Two interchangeable implementations of the hot loops live here: a compiled
Cython extension (``_core``) and a pure-numpy reference (``pyref``).  They
produce bit-identical output, so everything above this package is backend
agnostic.  Selection happens once at import time:

* ``HORIZON_LAB_BACKEND=compiled`` requires the extension and raises if it
  is missing or broken.
* ``HORIZON_LAB_BACKEND=python`` forces the reference implementation.
* unset or empty: use the extension when present, else fall back silently.

``HORIZON_LAB_THREADS`` (or an explicit thread count) only affects wall
time of the compiled backend, never results.
"""

import importlib
import os

from . import pyref

_core = None
_requested = os.environ.get("HORIZON_LAB_BACKEND", "").strip().lower()
if _requested not in ("", "compiled", "python"):
    raise ImportError(
        "HORIZON_LAB_BACKEND must be 'compiled', 'python', or unset, "
        "got %r" % _requested
    )
if _requested in ("", "compiled"):
    try:
        _core = importlib.import_module("._core", __name__)
    except ImportError:
        if _requested == "compiled":
            raise ImportError(
                "HORIZON_LAB_BACKEND=compiled but the compiled kernel "
                "extension is not importable; reinstall the package or "
                "unset the variable to use the python backend"
            )
        _core = None

if _core is not None:
    BACKEND = "compiled"
    _impl = _core
else:
    BACKEND = "python"
    _impl = pyref

uniform_pairs = _impl.uniform_pairs
norm_ppf = _impl.norm_ppf
portable_log = _impl.portable_log
ou_paths = _impl.ou_paths
feller_paths = _impl.feller_paths

# Stream ids keep independent uses of the generator from colliding under a
# shared seed: simulation draws vs. the two-point construction's cells.
STREAM_SIM = 1
STREAM_CE = 2


def resolve_threads(threads=None):
    """Thread count for the compiled backend.

    Explicit argument wins, then HORIZON_LAB_THREADS, then 1.  Values are
    clamped to at least 1.  Results never depend on this.
    """
    if threads is None:
        raw = os.environ.get("HORIZON_LAB_THREADS", "").strip()
        if raw:
            try:
                threads = int(raw)
            except ValueError:
                raise ValueError(
                    "HORIZON_LAB_THREADS must be an integer, got %r" % raw
                )
        else:
            threads = 1
    threads = int(threads)
    return threads if threads >= 1 else 1
