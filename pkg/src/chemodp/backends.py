"""Hot numerical kernels: numba-compiled with a pure-numpy fallback.

The active backend is chosen once at import from the environment variable
``CHEMODP_BACKEND`` ("numba" or "numpy"; default "numba" when importable).
Both backends are deterministic run-to-run; they are not guaranteed to agree
bitwise with each other because summation orders differ.

All kernels operate on the 6-coordinate point layout used throughout the
package: 4 normalized state coordinates followed by 2 unit-scaled dose
coordinates.  The Bellman sweep and the dose selector exploit the grid
structure (every state center carries all 4 doses, dose index fastest) by
splitting the Gaussian kernel into a state factor and a precomputed dose
factor; see `dose_coefficients` in `regressor`.
"""

from __future__ import annotations

import math
import os

import numpy as np

ENV_VAR = "CHEMODP_BACKEND"


def _f64(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _sq_dists_np(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


def kernel_matrix_numpy(a: np.ndarray, b: np.ndarray, bandwidth: float) -> np.ndarray:
    """exp(-bandwidth * ||a_i - b_j||^2), shape (len(a), len(b))."""
    return np.exp(-bandwidth * _sq_dists_np(_f64(a), _f64(b)))


def rbf_predict_numpy(z: np.ndarray, centers: np.ndarray, beta: np.ndarray,
                      beta0: float, bandwidth: float) -> np.ndarray:
    z = _f64(z)
    centers = _f64(centers)
    n = z.shape[0]
    out = np.empty(n)
    chunk = max(1, int(8e6) // max(1, centers.shape[0]))
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        k = np.exp(-bandwidth * _sq_dists_np(z[lo:hi], centers))
        out[lo:hi] = beta0 + k @ beta
    return out


def bellman_stats_numpy(next_states, state_centers, coef, beta0, bandwidth,
                        weights, alpha):
    """Per grid point: min over candidate doses of mean + alpha*variance.

    next_states: (n_g, n_cl, 4) normalized successors per cluster;
    state_centers: (n_x, 4); coef: (n_x, 4) dose-folded coefficients.
    Returns (s_min (n_g,), excursion (n_g,)) where excursion is the largest
    |prediction - cluster mean| seen at that grid point over doses and
    clusters.
    """
    next_states = _f64(next_states)
    state_centers = _f64(state_centers)
    coef = _f64(coef)
    weights = _f64(weights)
    n_g, n_cl, _ = next_states.shape
    n_x = state_centers.shape[0]
    s_min = np.empty(n_g)
    exc = np.empty(n_g)
    chunk = max(1, int(8e6) // max(1, n_cl * n_x))
    for lo in range(0, n_g, chunk):
        hi = min(n_g, lo + chunk)
        flat = next_states[lo:hi].reshape(-1, 4)
        k = np.exp(-bandwidth * _sq_dists_np(flat, state_centers))
        preds = beta0 + (k @ coef).reshape(hi - lo, n_cl, 4)
        mu = np.einsum("j,cjv->cv", weights, preds)
        dev = preds - mu[:, None, :]
        var = np.einsum("j,cjv->cv", weights, dev * dev)
        s = mu + alpha * var
        s_min[lo:hi] = s.min(axis=1)
        exc[lo:hi] = np.abs(dev).max(axis=(1, 2))
    return s_min, exc


def dose_argmin_numpy(x, state_centers, coef, beta0, bandwidth):
    """Index of the first cost-minimizing dose for each normalized state."""
    x = _f64(x)
    state_centers = _f64(state_centers)
    coef = _f64(coef)
    n = x.shape[0]
    idx = np.empty(n, dtype=np.int64)
    chunk = max(1, int(8e6) // max(1, state_centers.shape[0]))
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        k = np.exp(-bandwidth * _sq_dists_np(x[lo:hi], state_centers))
        preds = beta0 + k @ coef
        idx[lo:hi] = preds.argmin(axis=1)
    return idx


_NUMPY_IMPLS = {
    "kernel_matrix": kernel_matrix_numpy,
    "rbf_predict": rbf_predict_numpy,
    "bellman_stats": bellman_stats_numpy,
    "dose_argmin": dose_argmin_numpy,
}

# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

_NUMBA_IMPLS: dict | None = None


def _build_numba_impls():
    import numba
    from numba import njit, prange

    @njit(cache=True, parallel=True)
    def _kernel_matrix(a, b, bandwidth):
        n, d = a.shape
        m = b.shape[0]
        out = np.empty((n, m))
        for i in prange(n):
            for j in range(m):
                acc = 0.0
                for k in range(d):
                    diff = a[i, k] - b[j, k]
                    acc += diff * diff
                out[i, j] = math.exp(-bandwidth * acc)
        return out

    @njit(cache=True, parallel=True)
    def _rbf_predict(z, centers, beta, beta0, bandwidth):
        n, d = z.shape
        m = centers.shape[0]
        out = np.empty(n)
        for i in prange(n):
            acc = 0.0
            for j in range(m):
                s = 0.0
                for k in range(d):
                    diff = z[i, k] - centers[j, k]
                    s += diff * diff
                acc += beta[j] * math.exp(-bandwidth * s)
            out[i] = beta0 + acc
        return out

    @njit(cache=True, parallel=True)
    def _bellman_stats(next_states, state_centers, coef, beta0, bandwidth,
                       weights, alpha):
        n_g, n_cl, _ = next_states.shape
        n_x = state_centers.shape[0]
        s_min = np.empty(n_g)
        exc = np.empty(n_g)
        for i in prange(n_g):
            preds = np.empty((n_cl, 4))
            for j in range(n_cl):
                a0 = 0.0
                a1 = 0.0
                a2 = 0.0
                a3 = 0.0
                for c in range(n_x):
                    d0 = next_states[i, j, 0] - state_centers[c, 0]
                    d1 = next_states[i, j, 1] - state_centers[c, 1]
                    d2 = next_states[i, j, 2] - state_centers[c, 2]
                    d3 = next_states[i, j, 3] - state_centers[c, 3]
                    g = math.exp(-bandwidth * (d0 * d0 + d1 * d1 + d2 * d2 + d3 * d3))
                    a0 += g * coef[c, 0]
                    a1 += g * coef[c, 1]
                    a2 += g * coef[c, 2]
                    a3 += g * coef[c, 3]
                preds[j, 0] = beta0 + a0
                preds[j, 1] = beta0 + a1
                preds[j, 2] = beta0 + a2
                preds[j, 3] = beta0 + a3
            best = np.inf
            worst = 0.0
            for v in range(4):
                mu = 0.0
                for j in range(n_cl):
                    mu += weights[j] * preds[j, v]
                var = 0.0
                for j in range(n_cl):
                    dev = preds[j, v] - mu
                    var += weights[j] * dev * dev
                    if abs(dev) > worst:
                        worst = abs(dev)
                s = mu + alpha * var
                if s < best:
                    best = s
            s_min[i] = best
            exc[i] = worst
        return s_min, exc

    @njit(cache=True, parallel=True)
    def _dose_argmin(x, state_centers, coef, beta0, bandwidth):
        n = x.shape[0]
        n_x = state_centers.shape[0]
        idx = np.empty(n, dtype=np.int64)
        for i in prange(n):
            a0 = 0.0
            a1 = 0.0
            a2 = 0.0
            a3 = 0.0
            for c in range(n_x):
                d0 = x[i, 0] - state_centers[c, 0]
                d1 = x[i, 1] - state_centers[c, 1]
                d2 = x[i, 2] - state_centers[c, 2]
                d3 = x[i, 3] - state_centers[c, 3]
                g = math.exp(-bandwidth * (d0 * d0 + d1 * d1 + d2 * d2 + d3 * d3))
                a0 += g * coef[c, 0]
                a1 += g * coef[c, 1]
                a2 += g * coef[c, 2]
                a3 += g * coef[c, 3]
            best = beta0 + a0
            best_v = 0
            if beta0 + a1 < best:
                best = beta0 + a1
                best_v = 1
            if beta0 + a2 < best:
                best = beta0 + a2
                best_v = 2
            if beta0 + a3 < best:
                best = beta0 + a3
                best_v = 3
            idx[i] = best_v
        return idx

    def kernel_matrix(a, b, bandwidth):
        return _kernel_matrix(_f64(a), _f64(b), float(bandwidth))

    def rbf_predict(z, centers, beta, beta0, bandwidth):
        return _rbf_predict(_f64(z), _f64(centers), _f64(beta), float(beta0), float(bandwidth))

    def bellman_stats(next_states, state_centers, coef, beta0, bandwidth, weights, alpha):
        return _bellman_stats(_f64(next_states), _f64(state_centers), _f64(coef),
                              float(beta0), float(bandwidth), _f64(weights), float(alpha))

    def dose_argmin(x, state_centers, coef, beta0, bandwidth):
        return _dose_argmin(_f64(x), _f64(state_centers), _f64(coef),
                            float(beta0), float(bandwidth))

    kernel_matrix.__doc__ = kernel_matrix_numpy.__doc__
    bellman_stats.__doc__ = bellman_stats_numpy.__doc__
    dose_argmin.__doc__ = dose_argmin_numpy.__doc__
    return {
        "kernel_matrix": kernel_matrix,
        "rbf_predict": rbf_predict,
        "bellman_stats": bellman_stats,
        "dose_argmin": dose_argmin,
    }


def get_impls(backend: str) -> dict:
    """Implementation table for an explicit backend name (used by benchmarks)."""
    global _NUMBA_IMPLS
    if backend == "numpy":
        return _NUMPY_IMPLS
    if backend == "numba":
        if _NUMBA_IMPLS is None:
            _NUMBA_IMPLS = _build_numba_impls()
        return _NUMBA_IMPLS
    raise ValueError(f"unknown backend {backend!r}; expected 'numba' or 'numpy'")


def _select_backend() -> str:
    requested = os.environ.get(ENV_VAR, "").strip().lower()
    if requested in ("numba", "numpy"):
        return requested
    if requested:
        raise ValueError(f"{ENV_VAR}={requested!r} not recognized; use 'numba' or 'numpy'")
    try:
        import numba  # noqa: F401
        return "numba"
    except ImportError:
        return "numpy"


BACKEND = _select_backend()
_active = get_impls(BACKEND)

kernel_matrix = _active["kernel_matrix"]
rbf_predict = _active["rbf_predict"]
bellman_stats = _active["bellman_stats"]
dose_argmin = _active["dose_argmin"]


def set_thread_count(n: int) -> None:
    """Cap numba worker threads; a no-op on the numpy backend."""
    if BACKEND != "numba":
        return
    import numba
    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
