"""Hot inner kernels: numba-jitted versions with pure-numpy fallbacks.

The backend is resolved once at import time.  numba is used when it is
importable unless the environment variable ``ISACSIM_NUMBA`` is set to
``0``/``false``/``no``/``off``, which forces the numpy path.  Both
implementations stay importable so ``benchmarks/bench_kernels.py`` can time
them against each other.

Results may differ between backends in the last few floating-point bits
(summation order); everything downstream treats that as noise.
"""

import os

import numpy as np

__all__ = [
    "NUMBA_ENABLED",
    "backend_name",
    "mix_paths",
    "mix_paths_numpy",
    "nearest_symbol_indices",
    "nearest_symbol_indices_numpy",
]


def _resolve_backend() -> bool:
    flag = os.environ.get("ISACSIM_NUMBA", "").strip().lower()
    if flag in {"0", "false", "no", "off"}:
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


NUMBA_ENABLED = _resolve_backend()


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"


# ---------------------------------------------------------------------------
# multipath mixing: y[r, e] = sum_l sum_t spatial[l, r, t] * phase[l, e] * x[t, e]
# ---------------------------------------------------------------------------

def mix_paths_numpy(spatial: np.ndarray, phase: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Apply a sum of per-path (matrix x elementwise-phase) operators.

    spatial: (L, Nr, Nt) complex, phase: (L, E) complex, x: (Nt, E) complex.
    Returns (Nr, E).  The adjoint is obtained by passing the conjugate
    transpose of ``spatial`` and the conjugate of ``phase``.
    """
    n_out = spatial.shape[1]
    y = np.zeros((n_out, x.shape[1]), dtype=np.complex128)
    for l in range(spatial.shape[0]):
        y += spatial[l] @ (x * phase[l][None, :])
    return y


def nearest_symbol_indices_numpy(values: np.ndarray, constellation: np.ndarray) -> np.ndarray:
    """Index of the nearest constellation point for every value (ties -> lowest index)."""
    values = np.ascontiguousarray(values).ravel()
    out = np.empty(values.shape[0], dtype=np.int64)
    # chunked to bound the (chunk, Q) scratch matrix
    step = 1 << 15
    for start in range(0, values.shape[0], step):
        block = values[start : start + step]
        d2 = np.abs(block[:, None] - constellation[None, :])
        out[start : start + step] = np.argmin(d2, axis=1)
    return out


if NUMBA_ENABLED:
    from numba import njit

    @njit(cache=True, nogil=True)
    def _mix_paths_nb(spatial, phase, x, y):  # pragma: no cover - jitted
        n_paths, n_out, n_in = spatial.shape
        n_cells = x.shape[1]
        for l in range(n_paths):
            for e in range(n_cells):
                p = phase[l, e]
                for r in range(n_out):
                    acc = 0.0 + 0.0j
                    for t in range(n_in):
                        acc += spatial[l, r, t] * (x[t, e] * p)
                    y[r, e] += acc

    @njit(cache=True, nogil=True)
    def _nearest_nb(values, constellation, out):  # pragma: no cover - jitted
        n_points = constellation.shape[0]
        for i in range(values.shape[0]):
            best = 0
            v = values[i]
            d = constellation[0] - v
            best_d = d.real * d.real + d.imag * d.imag
            for q in range(1, n_points):
                d = constellation[q] - v
                dd = d.real * d.real + d.imag * d.imag
                if dd < best_d:
                    best_d = dd
                    best = q
            out[i] = best

    def mix_paths_numba(spatial, phase, x):
        spatial = np.ascontiguousarray(spatial, dtype=np.complex128)
        phase = np.ascontiguousarray(phase, dtype=np.complex128)
        x = np.ascontiguousarray(x, dtype=np.complex128)
        y = np.zeros((spatial.shape[1], x.shape[1]), dtype=np.complex128)
        _mix_paths_nb(spatial, phase, x, y)
        return y

    def nearest_symbol_indices_numba(values, constellation):
        flat = np.ascontiguousarray(values, dtype=np.complex128).ravel()
        constellation = np.ascontiguousarray(constellation, dtype=np.complex128)
        out = np.empty(flat.shape[0], dtype=np.int64)
        _nearest_nb(flat, constellation, out)
        return out

    mix_paths = mix_paths_numba
    nearest_symbol_indices = nearest_symbol_indices_numba
else:
    mix_paths_numba = None
    nearest_symbol_indices_numba = None
    mix_paths = mix_paths_numpy
    nearest_symbol_indices = nearest_symbol_indices_numpy
