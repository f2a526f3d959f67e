"""Selection of the hot-kernel backend.

The compute-heavy inner kernels (convolution, correlation volume, volume
lookup, bilinear resampling) exist twice: a numba-compiled version and a
vectorized pure-numpy fallback. ``STEREOKD_BACKEND`` picks one:

    STEREOKD_BACKEND=numba   force numba (error if numba is unavailable)
    STEREOKD_BACKEND=numpy   force the pure-numpy fallback
    unset / auto             numba when importable, numpy otherwise

``AIO_STEREO_THREADS``, when set, caps the numba thread count and the
evaluation worker pool.
"""

import os

_active = None
_active_name = None


def _resolve(name):
    if name == "numpy":
        from stereokd import kernels_numpy
        return kernels_numpy, "numpy"
    if name == "numba":
        from stereokd import kernels_numba
        return kernels_numba, "numba"
    if name == "auto":
        try:
            from stereokd import kernels_numba
            return kernels_numba, "numba"
        except ImportError:
            from stereokd import kernels_numpy
            return kernels_numpy, "numpy"
    raise ValueError(f"unknown backend {name!r}; expected numba, numpy or auto")


def _apply_thread_cap():
    cap = os.environ.get("AIO_STEREO_THREADS")
    if not cap:
        return
    try:
        import numba
        numba.set_num_threads(max(1, min(int(cap), numba.config.NUMBA_NUM_THREADS)))
    except ImportError:
        pass


def thread_cap(default):
    """Worker count for pools, honoring AIO_STEREO_THREADS."""
    cap = os.environ.get("AIO_STEREO_THREADS")
    if cap:
        return max(1, int(cap))
    return default


def set_backend(name):
    """Force a backend programmatically (tests and benchmarks)."""
    global _active, _active_name
    _active, _active_name = _resolve(name)


def kernels():
    """Return the active kernel module, resolving it on first use."""
    global _active, _active_name
    if _active is None:
        requested = os.environ.get("STEREOKD_BACKEND", "auto").lower()
        _active, _active_name = _resolve(requested)
        if _active_name == "numba":
            _apply_thread_cap()
    return _active


def backend_name():
    kernels()
    return _active_name
