"""Kernel backend selection.

The compiled extension is used when it was built; otherwise the numpy
fallback. Set ``PBOPE_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

if os.environ.get("PBOPE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = _impl.BACKEND
counter_uniforms = _impl.counter_uniforms
em_sweep = _impl.em_sweep
cell_log_likelihood = _impl.cell_log_likelihood
ips_sums = _impl.ips_sums

RNG_NAME = "splitmix64-counter(seed,day,index)"


def backends():
    """All importable backends, keyed by name."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels

        out["cython"] = _kernels
    except ImportError:
        pass
    return out


def worker_count() -> int:
    """Parallelism cap from ``PBOPE_THREADS`` (0 or unset means one per CPU)."""
    raw = os.environ.get("PBOPE_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return n
