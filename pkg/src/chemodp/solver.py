"""Grid construction and the variance-penalized fixed-point value iteration.

The unknown is the vector q of values at the grid points z = (x, u).  One
update maps q to

    q_plus_i = L(z_i) + gamma * min_v [ mu_i(v) + alpha * sigma2_i(v) ]

where mu and sigma2 are the cluster-weighted mean and variance of the
regression model's predictions at the successor states of z_i under each
cluster center, and the minimum runs over the four admissible doses in
fixed order.  Iterating from q = L converges when the effective contraction
factor gamma * (1 + 2*alpha*B) stays below one, B being the excursion bound
of the fitted model; the solver logs the empirical counterpart of both
quantities every iteration.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import backends
from .errors import DivergenceError
from .model import (
    CostParams,
    DoseSet,
    ModelParams,
    REF_SCALE,
    denormalize,
    next_states_psi,
    stage_cost,
)

from .regressor import GridKernel, KernelModel, dose_coefficients
from .uncertainty import ClusterSet

_NOMINAL_H = ModelParams.nominal().h


@dataclass(frozen=True)
class SolverConfig:
    grid_resolution: int = 7
    gamma: float = 0.95
    alpha: float = 0.0
    tau: float = 0.25        # days
    tol_inf: float = 1e-6
    max_iter: int = 500
    seed: int = 0
    bandwidth: float | None = None   # None: median heuristic on the grid
    ridge: float = 1e-3

    def __post_init__(self):
        if self.grid_resolution < 2:
            raise ValueError("grid_resolution must be >= 2")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma out of (0,1]: {self.gamma!r}")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")


@dataclass(frozen=True)
class Grid:
    """Normalized state points crossed with the four doses, dose index fastest."""

    states: np.ndarray          # (n_states, 4) in [0,1]^4
    dose_set: DoseSet
    z: np.ndarray               # (n_states*4, 6) state + dose encoding

    @property
    def n_points(self) -> int:
        return self.z.shape[0]

    @property
    def dose_values(self) -> np.ndarray:
        return self.dose_set.values

    def point_doses(self) -> np.ndarray:
        """Raw dose of every grid point, shape (n_points, 2)."""
        return np.tile(self.dose_set.values, (self.states.shape[0], 1))


def build_grid(resolution: int, dose_set: DoseSet | None = None) -> Grid:
    """Uniform grid on [0,1]^4 (corners included) times the 4-dose set."""
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    dose_set = dose_set or DoseSet()
    axis = np.linspace(0.0, 1.0, resolution)
    mesh = np.meshgrid(axis, axis, axis, axis, indexing="ij")
    states = np.stack([m.ravel() for m in mesh], axis=1)
    enc = dose_set.encodings
    z = np.concatenate(
        [np.repeat(states, 4, axis=0), np.tile(enc, (states.shape[0], 1))], axis=1
    )
    grid = Grid(states=states, dose_set=dose_set, z=np.ascontiguousarray(z))
    assert grid.n_points == resolution ** 4 * 4
    return grid


@dataclass
class QTable:
    grid: Grid
    q: np.ndarray               # (n_points,)

    def save_csv(self, path) -> None:
        doses = self.grid.point_doses()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "x2", "x3", "x4", "u1", "u2", "q"])
            for zrow, urow, qv in zip(self.grid.z, doses, self.q):
                w.writerow([repr(float(v)) for v in zrow[:4]]
                           + [repr(float(v)) for v in urow]
                           + [repr(float(qv))])


@dataclass
class ConvergenceLog:
    diff_inf: list[float] = field(default_factory=list)
    b_hat: list[float] = field(default_factory=list)
    ratio: list[float] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)
    q_max: list[float] = field(default_factory=list)
    q_min: list[float] = field(default_factory=list)

    def append(self, diff, b_hat, ratio, wall_ms, q_max, q_min) -> None:
        self.diff_inf.append(float(diff))
        self.b_hat.append(float(b_hat))
        self.ratio.append(float(ratio))
        self.wall_ms.append(float(wall_ms))
        self.q_max.append(float(q_max))
        self.q_min.append(float(q_min))

    def __len__(self) -> int:
        return len(self.diff_inf)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "diff_inf", "B_hat", "ratio", "wall_ms"])
            for i in range(len(self.diff_inf)):
                w.writerow([i + 1, repr(self.diff_inf[i]), repr(self.b_hat[i]),
                            repr(self.ratio[i]), repr(self.wall_ms[i])])

    @classmethod
    def load_csv(cls, path) -> "ConvergenceLog":
        log = cls()
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        for row in rows[1:]:
            log.diff_inf.append(float(row[1]))
            log.b_hat.append(float(row[2]))
            log.ratio.append(float(row[3]))
            log.wall_ms.append(float(row[4]))
        return log


@dataclass
class SolveResult:
    qtable: QTable
    model: KernelModel
    log: ConvergenceLog
    converged: bool


def grid_stage_costs(grid: Grid, cost: CostParams) -> np.ndarray:
    """Stage cost of every grid point (its own state and dose)."""
    return np.asarray(stage_cost(grid.z[:, :4], grid.point_doses(), cost))


def successor_states(grid: Grid, clusters: ClusterSet, tau: float, h: float) -> np.ndarray:
    """Normalized clamped successors of every grid point under every cluster.

    Shape (n_points, n_cl, 4); independent of q, so computed once per solve.
    """
    x_raw = denormalize(grid.z[:, :4])
    u_raw = grid.point_doses()
    return next_states_psi(x_raw, u_raw, clusters.centers, tau, h) / REF_SCALE


def s_hat_alpha(x_norm, u, v, model: KernelModel, clusters: ClusterSet,
                alpha: float, tau: float, h: float,
                dose_set: DoseSet | None = None) -> float:
    """Cluster-approximated mean + alpha * variance of the successor value.

    Reference (per-point) implementation; the solver sweep computes the same
    quantity in bulk through `backends.bellman_stats`.
    """
    dose_set = dose_set or DoseSet()
    x_raw = denormalize(np.asarray(x_norm, dtype=float))
    u = np.asarray(u, dtype=float)
    nxt = next_states_psi(x_raw[None, :], u[None, :], clusters.centers, tau, h)[0]
    nxt_norm = nxt / REF_SCALE
    v_enc = dose_set.encode(v)
    z = np.concatenate([nxt_norm, np.broadcast_to(v_enc, (len(clusters), 2))], axis=1)
    preds = np.asarray(model.predict(z))
    mu = float(preds @ clusters.weights)
    dev = preds - mu
    var = float((clusters.weights * dev * dev).sum())
    return mu + alpha * var


def bellman_update(model: KernelModel, clusters: ClusterSet, grid: Grid,
                   config: SolverConfig, cost: CostParams,
                   next_norm: np.ndarray | None = None,
                   stage: np.ndarray | None = None,
                   h: float = _NOMINAL_H) -> tuple[np.ndarray, float]:
    """One fixed-point update from the model fitted to the current values.

    Returns (q_plus, b_hat) where b_hat is the largest prediction excursion
    from its cluster mean observed during the sweep.
    """
    if next_norm is None:
        next_norm = successor_states(grid, clusters, config.tau, h)
    if stage is None:
        stage = grid_stage_costs(grid, cost)
    state_centers, coef = dose_coefficients(model, grid.dose_set.encodings)
    s_min, exc = backends.bellman_stats(
        next_norm, state_centers, coef, model.beta0, model.bandwidth,
        clusters.weights, config.alpha,
    )
    q_plus = stage + config.gamma * s_min
    if not np.all(np.isfinite(q_plus)):
        idx = int(np.flatnonzero(~np.isfinite(q_plus))[0])
        raise DivergenceError(f"non-finite value update at grid index {idx}")
    return q_plus, float(exc.max())


def _check_runaway(diffs: list[float]) -> None:
    if len(diffs) < 21:
        return
    window = diffs[-21:]
    growing = all(window[i + 1] > window[i] for i in range(20))
    if growing and window[-1] > 10.0 * window[0]:
        raise DivergenceError(
            f"divergence: diff grew from {window[0]:.3e} to {window[-1]:.3e} "
            "over 20 consecutive iterations"
        )


def solve(config: SolverConfig, clusters: ClusterSet,
          cost: CostParams | None = None, dose_set: DoseSet | None = None,
          h: float = _NOMINAL_H) -> SolveResult:
    """Run the value iteration from q = L until tolerance or max_iter.

    Deterministic given (config, clusters): the grid, the kernel system and
    the sweep order are all fixed.
    """
    cost = cost or CostParams()
    dose_set = dose_set or DoseSet()
    grid = build_grid(config.grid_resolution, dose_set)
    stage = grid_stage_costs(grid, cost)
    next_norm = successor_states(grid, clusters, config.tau, h)
    gk = GridKernel(grid.z, bandwidth=config.bandwidth, ridge=config.ridge)

    q = stage.copy()
    log = ConvergenceLog()
    converged = False
    prev_diff = None
    for _ in range(config.max_iter):
        t0 = time.perf_counter()
        model = gk.fit(q)
        q_new, b_hat = bellman_update(model, clusters, grid, config, cost,
                                      next_norm=next_norm, stage=stage, h=h)
        assert np.isfinite(b_hat), "excursion bound must stay finite"
        diff = float(np.max(np.abs(q_new - q)))
        ratio = diff / prev_diff if prev_diff else float("nan")
        log.append(diff, b_hat, ratio, (time.perf_counter() - t0) * 1e3,
                   q_new.max(), q_new.min())
        q = q_new
        prev_diff = diff
        if diff < config.tol_inf:
            converged = True
            break
        _check_runaway(log.diff_inf)
    return SolveResult(qtable=QTable(grid=grid, q=q), model=gk.fit(q),
                       log=log, converged=converged)


@dataclass(frozen=True)
class ContractionReport:
    rho_hat: float      # median of trailing successive-diff ratios
    rho_star: float     # gamma * (1 + 2 * alpha * B_hat)
    within_bound: bool  # rho_hat <= max(rho_star, 1)


def contraction_diagnostic(log: ConvergenceLog, b_hat_final: float,
                           config: SolverConfig) -> ContractionReport:
    """Empirical vs. theoretical contraction factor (informational only)."""
    diffs = np.asarray(log.diff_inf, dtype=float)
    if diffs.size < 3:
        raise ValueError("contraction diagnostic needs at least 3 iterations")
    ratios = diffs[1:] / diffs[:-1]
    rho_hat = float(np.median(ratios[-10:]))
    rho_star = config.gamma * (1.0 + 2.0 * config.alpha * b_hat_final)
    return ContractionReport(rho_hat=rho_hat, rho_star=rho_star,
                             within_bound=bool(rho_hat <= max(rho_star, 1.0)))
