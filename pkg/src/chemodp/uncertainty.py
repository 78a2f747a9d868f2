"""Parameter dispersion model and cluster compression of its feature vectors.

Each uncertain rate constant is perturbed multiplicatively,
p = (1 + nu) * p_nominal with nu ~ Normal(0, relative_std^2), resampled
per coordinate until 1 + nu exceeds a small positive floor so parameters
stay strictly positive on a compact support.  The resulting psi feature
vectors are compressed to a small set of weighted centroids by Lloyd's
k-means with k-means++ seeding; the centroid weights are the cluster
shares of the sample and act as probabilities in all expectation and
variance evaluations downstream.

k-means runs on duplicate-collapsed points (weighted by multiplicity) and
on coordinates scaled to unit variance per dimension, because psi entries
span many orders of magnitude.  Centroids are reported in the original
coordinates; a cluster holding a single distinct point returns that point
exactly.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams, PSI_DIM, PSI_NAMES, PARAM_FIELDS, psi_matrix

KMEANS_MAX_ITER = 300
KMEANS_REL_TOL = 1e-6


@dataclass(frozen=True)
class UncertaintyModel:
    """Multiplicative-normal dispersion around a nominal parameter vector."""

    nominal: ModelParams = field(default_factory=ModelParams.nominal)
    relative_std: float = 0.4
    dirac: bool = False          # collapse all mass onto the nominal vector
    sample_count: int = 10_000
    cluster_count: int = 20
    seed: int = 0
    truncation: float = 0.01     # keep draws with 1 + nu > truncation

    def __post_init__(self):
        if self.relative_std < 0:
            raise ValueError("relative_std must be >= 0")
        if not 0 < self.truncation < 1:
            raise ValueError("truncation must lie in (0, 1)")
        if self.sample_count < 1 or self.cluster_count < 1:
            raise ValueError("sample_count and cluster_count must be >= 1")
        if self.cluster_count > self.sample_count:
            raise ValueError("cluster_count cannot exceed sample_count")

    @property
    def effective_std(self) -> float:
        return 0.0 if self.dirac else self.relative_std


def sample_params(model: UncertaintyModel, n: int | None = None,
                  seed: int | None = None) -> list[ModelParams]:
    """Draw n parameter vectors from the dispersion model, seeded."""
    n = model.sample_count if n is None else int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    std = model.effective_std
    if std == 0.0:
        return [model.nominal] * n
    rng = np.random.default_rng(model.seed if seed is None else seed)
    factors = 1.0 + rng.normal(0.0, std, size=(n, len(PARAM_FIELDS)))
    bad = factors <= model.truncation
    while bad.any():
        factors[bad] = 1.0 + rng.normal(0.0, std, size=int(bad.sum()))
        bad = factors <= model.truncation
    base = model.nominal.uncertain_array()
    return [ModelParams.from_uncertain_array(base * f, h=model.nominal.h) for f in factors]


@dataclass
class ClusterSet:
    """Weighted psi centroids standing in for the full parameter sample."""

    centers: np.ndarray   # (n_cl, 14)
    weights: np.ndarray   # (n_cl,), positive, summing to 1
    sse_history: list = field(default_factory=list, compare=False)  # Lloyd diagnostics

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.centers.ndim != 2 or self.centers.shape[1] != PSI_DIM:
            raise ValueError(f"centers must have shape (n_cl, {PSI_DIM})")
        if self.weights.shape != (self.centers.shape[0],):
            raise ValueError("weights must match the number of centers")
        if np.any(self.weights <= 0):
            raise ValueError("all cluster weights must be > 0")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {self.weights.sum()!r}")
        if not np.all(np.isfinite(self.centers)):
            raise ValueError("cluster centers must be finite")

    def __len__(self) -> int:
        return self.centers.shape[0]

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(PSI_NAMES) + ["weight"])
            for center, weight in zip(self.centers, self.weights):
                w.writerow([repr(float(v)) for v in center] + [repr(float(weight))])

    @classmethod
    def load_csv(cls, path) -> "ClusterSet":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        data = np.array([[float(v) for v in row] for row in rows[1:]])
        return cls(centers=data[:, :PSI_DIM], weights=data[:, PSI_DIM])


def _weighted_centroids(points: np.ndarray, counts: np.ndarray,
                        labels: np.ndarray, n_active: int) -> tuple[np.ndarray, np.ndarray]:
    """Centroids and member-count totals per label; exact for singleton clusters."""
    centers = np.empty((n_active, points.shape[1]))
    totals = np.empty(n_active)
    for c in range(n_active):
        members = labels == c
        totals[c] = counts[members].sum()
        pts = points[members]
        if pts.shape[0] == 1:
            centers[c] = pts[0]
        else:
            centers[c] = np.average(pts, axis=0, weights=counts[members])
    return centers, totals


def _kmeans_pp_init(points: np.ndarray, counts: np.ndarray, k: int,
                    rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    probs = counts / counts.sum()
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.choice(n, p=probs)
    d2 = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for j in range(1, k):
        w = counts * d2
        chosen[j] = rng.choice(n, p=w / w.sum())
        d2 = np.minimum(d2, ((points - points[chosen[j]]) ** 2).sum(axis=1))
    return points[chosen].copy()


def cluster_psi(samples: np.ndarray, n_cl: int, seed: int = 0) -> ClusterSet:
    """Compress psi samples into n_cl weighted centroids.

    Lloyd's algorithm with k-means++ seeding on unit-variance-scaled
    coordinates; constant dimensions are left unscaled.  Within-cluster
    SSE is asserted non-increasing across iterations.  Empty clusters are
    dropped and weights renormalized over the surviving ones.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise ValueError("samples must be a nonempty (n, dim) array")
    if n_cl < 1:
        raise ValueError("n_cl must be >= 1")
    n_total = samples.shape[0]

    points, counts = np.unique(samples, axis=0, return_counts=True)
    n_distinct = points.shape[0]
    if n_cl > n_distinct:
        warnings.warn(
            f"requested {n_cl} clusters but only {n_distinct} distinct samples; reducing",
            stacklevel=2,
        )
        n_cl = n_distinct
    if n_cl == n_distinct:
        return ClusterSet(centers=points.copy(), weights=counts / n_total)

    mean = np.average(points, axis=0, weights=counts)
    var = np.average((points - mean) ** 2, axis=0, weights=counts)
    scale = np.where(var > 0.0, 1.0 / np.sqrt(np.maximum(var, 1e-300)), 1.0)
    scaled = points * scale

    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(scaled, counts, n_cl, rng)
    prev_sse = np.inf
    labels = np.zeros(n_distinct, dtype=np.int64)
    history: list[float] = []
    for _ in range(KMEANS_MAX_ITER):
        d2 = ((scaled[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        sse = float((counts * d2[np.arange(n_distinct), labels]).sum())
        assert sse <= prev_sse * (1.0 + 1e-9) + 1e-300, "Lloyd SSE increased"
        history.append(sse)
        occupied = np.unique(labels)
        if occupied.size < centers.shape[0]:
            remap = -np.ones(centers.shape[0], dtype=np.int64)
            remap[occupied] = np.arange(occupied.size)
            labels = remap[labels]
        centers, _ = _weighted_centroids(scaled, counts, labels, occupied.size)
        if prev_sse < np.inf and abs(prev_sse - sse) <= KMEANS_REL_TOL * max(prev_sse, 1e-300):
            break
        prev_sse = sse

    raw_centers, totals = _weighted_centroids(points, counts, labels, centers.shape[0])
    return ClusterSet(centers=raw_centers, weights=totals / n_total, sse_history=history)


def build_clusters(model: UncertaintyModel, sample_seed: int | None = None,
                   cluster_seed: int | None = None) -> ClusterSet:
    """Sample the dispersion model and cluster the resulting psi vectors."""
    params = sample_params(model, seed=sample_seed)
    psis = psi_matrix(params)
    cseed = model.seed + 1 if cluster_seed is None else cluster_seed
    return cluster_psi(psis, model.cluster_count, seed=cseed)
