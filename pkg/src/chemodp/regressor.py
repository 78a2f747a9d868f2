"""Gaussian-kernel ridge regression of grid values.

A value vector q on the grid points is turned into a function defined on
the whole state/dose box (and smoothly outside it) with the structure

    Q(z) = beta0 + sum_i beta_i * exp(-bandwidth * ||z - z_i||^2)

where beta0 is the target mean and beta solves (K + ridge*I) beta = q - mean(q).
The Gram matrix depends only on the grid, so `GridKernel` factorizes it once
and reuses the Cholesky factor for every refit during the value iteration.

Ridge regularization keeps the coefficient norm bounded for value vectors in
any bounded set, which is what makes the excursion of predicted successor
values around their cluster mean uniformly bounded (`excursion_bound`).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from . import backends
from .errors import NumericsError
from .model import REF_SCALE, DoseSet, denormalize, next_states_psi

DEFAULT_RIDGE = 1e-3
Z_DIM = 6  # 4 normalized state coordinates + 2 unit-scaled dose coordinates


@dataclass
class KernelModel:
    """A fitted radial-basis expansion over fixed centers."""

    centers: np.ndarray      # (n, 6)
    beta: np.ndarray         # (n,)
    beta0: float
    bandwidth: float
    ridge: float

    def predict(self, z) -> np.ndarray | float:
        """Evaluate at one point (6,) or a batch (m, 6)."""
        z = np.asarray(z, dtype=float)
        single = z.ndim == 1
        if single:
            z = z[None, :]
        if z.shape[1] != self.centers.shape[1]:
            raise ValueError(f"expected {self.centers.shape[1]} coordinates, got {z.shape[1]}")
        out = backends.rbf_predict(z, self.centers, self.beta, self.beta0, self.bandwidth)
        return float(out[0]) if single else out

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# beta0={self.beta0!r}\n")
            fh.write(f"# bandwidth={self.bandwidth!r}\n")
            fh.write(f"# ridge={self.ridge!r}\n")
            w = csv.writer(fh)
            w.writerow(["x1", "x2", "x3", "x4", "u1e", "u2e", "beta"])
            for center, b in zip(self.centers, self.beta):
                w.writerow([repr(float(v)) for v in center] + [repr(float(b))])

    @classmethod
    def load_csv(cls, path) -> "KernelModel":
        meta = {}
        rows = []
        with open(path, newline="") as fh:
            for line in fh:
                if line.startswith("#"):
                    key, _, val = line[1:].strip().partition("=")
                    meta[key.strip()] = float(val)
                else:
                    rows.append(line)
        body = list(csv.reader(rows))
        data = np.array([[float(v) for v in row] for row in body[1:]])
        return cls(centers=data[:, :Z_DIM], beta=data[:, Z_DIM],
                   beta0=meta["beta0"], bandwidth=meta["bandwidth"], ridge=meta["ridge"])


def median_heuristic_bandwidth(points: np.ndarray, subsample: int = 500) -> float:
    """1 / (6 * median^2) over pairwise distances of a deterministic subsample."""
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    if n < 2:
        raise ValueError("need at least 2 points for the median heuristic")
    idx = np.unique(np.linspace(0, n - 1, min(subsample, n)).astype(int))
    sub = pts[idx]
    d2 = ((sub[:, None, :] - sub[None, :, :]) ** 2).sum(axis=2)
    iu = np.triu_indices(sub.shape[0], k=1)
    med = float(np.median(np.sqrt(d2[iu])))
    if med <= 0.0:
        raise ValueError("median pairwise distance is zero; grid points not distinct")
    return 1.0 / (6.0 * med * med)


class GridKernel:
    """Kernel system on a fixed grid with a cached Cholesky factorization."""

    def __init__(self, grid: np.ndarray, bandwidth: float | None = None,
                 ridge: float = DEFAULT_RIDGE):
        grid = np.ascontiguousarray(grid, dtype=float)
        if grid.ndim != 2:
            raise ValueError("grid must be a 2-d array of points")
        if np.unique(grid, axis=0).shape[0] != grid.shape[0]:
            raise ValueError("grid points must be distinct")
        self.grid = grid
        self.ridge = float(ridge)
        self.bandwidth = float(bandwidth) if bandwidth is not None \
            else median_heuristic_bandwidth(grid)
        k = backends.kernel_matrix(grid, grid, self.bandwidth)
        k[np.diag_indices_from(k)] += self.ridge
        try:
            self._factor = cho_factor(k, lower=True)
        except LinAlgError as err:
            n = grid.shape[0]
            cond = f"{np.linalg.cond(k):.3e}" if n <= 4096 else "n/a (too large)"
            raise NumericsError(
                f"kernel system not positive definite with ridge={self.ridge:g} "
                f"(n={n}, bandwidth={self.bandwidth:g}, cond={cond})"
            ) from err

    def fit(self, q: np.ndarray) -> KernelModel:
        """Fit the expansion to a value vector on the cached grid."""
        q = np.asarray(q, dtype=float)
        if q.shape != (self.grid.shape[0],):
            raise ValueError(f"q must have shape ({self.grid.shape[0]},)")
        beta0 = float(np.mean(q))
        beta = cho_solve(self._factor, q - beta0)
        return KernelModel(centers=self.grid, beta=beta, beta0=beta0,
                           bandwidth=self.bandwidth, ridge=self.ridge)


def fit(grid: np.ndarray, q: np.ndarray, bandwidth: float | None = None,
        ridge: float = DEFAULT_RIDGE) -> KernelModel:
    """One-shot fit; use GridKernel directly for repeated fits on one grid."""
    return GridKernel(grid, bandwidth=bandwidth, ridge=ridge).fit(q)


def dose_coefficients(model: KernelModel, dose_encodings: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fold the dose factor of the kernel into the coefficients.

    Requires the grid layout produced by `solver.build_grid`: centers are
    state points each repeated with all 4 dose encodings, dose index fastest.
    Returns (state_centers (n_x, 4), coef (n_x, 4)) such that

        Q(x, v) = beta0 + sum_c exp(-bw * ||x - state_c||^2) * coef[c, v].
    """
    centers = model.centers
    n = centers.shape[0]
    if n % 4 != 0:
        raise ValueError("model centers do not form a (state x 4 doses) grid")
    n_x = n // 4
    states = centers[:, :4].reshape(n_x, 4, 4)
    encs = centers[:, 4:6].reshape(n_x, 4, 2)
    if not (np.all(states == states[:, :1, :]) and np.all(encs == dose_encodings[None, :, :])):
        raise ValueError("model centers do not match the expected grid layout")
    dd2 = ((dose_encodings[:, None, :] - dose_encodings[None, :, :]) ** 2).sum(axis=2)
    dose_factor = np.exp(-model.bandwidth * dd2)  # (v, d)
    coef = model.beta.reshape(n_x, 4) @ dose_factor.T
    return np.ascontiguousarray(states[:, 0, :]), coef


def excursion_bound(model: KernelModel, clusters, grid_z: np.ndarray,
                    dose_set: DoseSet, tau: float, h: float) -> float:
    """Largest deviation of a successor value from its cluster-weighted mean.

    Maximizes |Q(phi(x,u) psi_j, v) - sum_k pi_k Q(phi(x,u) psi_k, v)| over
    grid points (x, u), candidate doses v, and clusters j.
    """
    grid_z = np.asarray(grid_z, dtype=float)
    x_raw = denormalize(grid_z[:, :4])
    u_raw = grid_z[:, 4:6] * np.array([dose_set.u1_max, dose_set.u2_max])
    nxt = next_states_psi(x_raw, u_raw, clusters.centers, tau, h) / REF_SCALE
    n_g, n_cl, _ = nxt.shape
    flat = nxt.reshape(-1, 4)
    bound = 0.0
    for enc in dose_set.encodings:
        z = np.concatenate([flat, np.broadcast_to(enc, (flat.shape[0], 2))], axis=1)
        preds = np.asarray(model.predict(z)).reshape(n_g, n_cl)
        mu = preds @ clusters.weights
        bound = max(bound, float(np.abs(preds - mu[:, None]).max()))
    return bound
