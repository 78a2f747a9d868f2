"""Feedback dose law extraction and closed-loop Monte Carlo evaluation.

A solved value table induces the feedback law u(x) = argmin over the four
doses of the fitted model's value at (x, u), ties broken toward the earliest
(lowest) dose.  Closed loops step the raw-unit dynamics under the true
(sampled) parameters while the policy only sees the normalized state, which
is how the dosing controller would operate on an actual patient whose rate
constants are unknown.

`evaluate_monte_carlo` runs several controllers over identical seeded
(initial state, parameter) pairs so per-pair cost ratios are paired
comparisons, mirroring the three-controller study the solver is built for:
a nominal controller (solved against the nominal parameters only), an
expectation-only controller, and a variance-penalized one.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import backends
from .errors import TrajectoryOverflowError
from .model import (
    CostParams,
    DoseSet,
    ModelParams,
    denormalize,
    euler_step_batch,
    normalize,
    stage_cost,
)
from .regressor import KernelModel, dose_coefficients
from .uncertainty import UncertaintyModel, sample_params

BLOWUP_LIMIT = 1e3  # normalized components beyond this abort the trajectory


@dataclass
class FeedbackPolicy:
    """Greedy dose selection against a fitted value model."""

    model: KernelModel
    dose_set: DoseSet = field(default_factory=DoseSet)

    def select_dose(self, x_norm) -> np.ndarray:
        """Raw dose minimizing the predicted value at a normalized state."""
        x = np.asarray(x_norm, dtype=float)
        z = np.concatenate(
            [np.broadcast_to(x, (4, 4)), self.dose_set.encodings], axis=1
        )
        preds = np.asarray(self.model.predict(z))
        return self.dose_set.values[int(np.argmin(preds))]

    def select_batch(self, x_norm: np.ndarray) -> np.ndarray:
        """Dose indices for a batch of normalized states (grid-layout model)."""
        state_centers, coef = dose_coefficients(self.model, self.dose_set.encodings)
        return backends.dose_argmin(x_norm, state_centers, coef,
                                    self.model.beta0, self.model.bandwidth)


@dataclass
class SimResult:
    states: np.ndarray        # (n_sim + 1, 4) normalized
    doses: np.ndarray         # (n_sim + 1, 2) raw
    j_cl: float
    min_x2: float
    mean_x2: float
    constraint_ok: bool


def _simulate_batch(x0_norm: np.ndarray, params: np.ndarray, h: float,
                    policy: FeedbackPolicy, n_sim: int, tau: float,
                    cost: CostParams, record: bool = False):
    """Advance a batch of closed loops in lockstep for n_sim steps.

    x0_norm: (m, 4), params: (m, 13) per-pair true parameters.  Returns
    (j_cl, min_x2, mean_x2, ok[, states, doses]) aggregated over the
    n_sim + 1 visited states; the dose applied at the final state enters the
    cost but its successor is not generated.
    """
    x = np.array(x0_norm, dtype=float)
    m = x.shape[0]
    state_centers, coef = dose_coefficients(policy.model, policy.dose_set.encodings)
    dose_values = policy.dose_set.values
    j_cl = np.zeros(m)
    min_x2 = x[:, 1].copy()
    sum_x2 = x[:, 1].copy()
    states = np.empty((n_sim + 1, m, 4)) if record else None
    doses = np.empty((n_sim + 1, m, 2)) if record else None
    if record:
        states[0] = x
    for k in range(n_sim + 1):
        idx = backends.dose_argmin(x, state_centers, coef,
                                   policy.model.beta0, policy.model.bandwidth)
        u = dose_values[idx]
        j_cl += stage_cost(x, u, cost)
        if record:
            doses[k] = u
        if k == n_sim:
            break
        x = normalize(euler_step_batch(denormalize(x), u, params, tau, h))
        if not np.all(np.isfinite(x)) or np.any(x > BLOWUP_LIMIT):
            bad = int(np.flatnonzero(~np.isfinite(x).all(axis=1)
                                     | (x > BLOWUP_LIMIT).any(axis=1))[0])
            raise TrajectoryOverflowError(
                f"trajectory {bad} left the safe region at step {k + 1}", step=k + 1
            )
        min_x2 = np.minimum(min_x2, x[:, 1])
        sum_x2 += x[:, 1]
        if record:
            states[k + 1] = x
    mean_x2 = sum_x2 / (n_sim + 1)
    ok = min_x2 >= cost.x2_min
    if record:
        return j_cl, min_x2, mean_x2, ok, states, doses
    return j_cl, min_x2, mean_x2, ok


def simulate_closed_loop(x0_norm, p: ModelParams, policy: FeedbackPolicy,
                         n_sim: int, tau: float,
                         cost: CostParams | None = None) -> SimResult:
    """Simulate one closed loop; the cost sums stage costs at k = 0..n_sim."""
    if n_sim < 0:
        raise ValueError("n_sim must be >= 0")
    cost = cost or CostParams()
    x0 = np.asarray(x0_norm, dtype=float)[None, :]
    params = p.uncertain_array()[None, :]
    j, mn, mean, ok, states, doses = _simulate_batch(
        x0, params, p.h, policy, n_sim, tau, cost, record=True
    )
    return SimResult(states=states[:, 0, :], doses=doses[:, 0, :],
                     j_cl=float(j[0]), min_x2=float(mn[0]),
                     mean_x2=float(mean[0]), constraint_ok=bool(ok[0]))


@dataclass
class EvalReport:
    """Per-(initial state, parameter, controller) closed-loop outcomes."""

    controllers: list[str]       # [0] is the baseline (nominal) controller
    n_x0: int
    n_p: int
    n_sim: int
    j_cl: np.ndarray             # (n_ctrl, n_x0, n_p)
    mean_x2: np.ndarray
    min_x2: np.ndarray
    constraint_ok: np.ndarray    # bool

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x0_id", "p_id", "controller", "J_cl",
                        "mean_x2", "min_x2", "constraint_ok"])
            for i in range(self.n_x0):
                for jdx in range(self.n_p):
                    for c, name in enumerate(self.controllers):
                        w.writerow([i, jdx, name,
                                    repr(float(self.j_cl[c, i, jdx])),
                                    repr(float(self.mean_x2[c, i, jdx])),
                                    repr(float(self.min_x2[c, i, jdx])),
                                    int(self.constraint_ok[c, i, jdx])])

    def performance_ratios(self, controller: str) -> tuple[np.ndarray, int]:
        """Per-pair J ratio vs baseline; pairs with zero baseline cost dropped."""
        c = self.controllers.index(controller)
        base = self.j_cl[0].ravel()
        other = self.j_cl[c].ravel()
        valid = base > 0.0
        return other[valid] / base[valid], int((~valid).sum())

    def lymphocyte_ratios(self, controller: str) -> tuple[np.ndarray, int]:
        c = self.controllers.index(controller)
        base = self.mean_x2[0].ravel()
        other = self.mean_x2[c].ravel()
        valid = base > 0.0
        return other[valid] / base[valid], int((~valid).sum())

    def satisfaction_percent(self, controller: str) -> np.ndarray:
        """Constraint-satisfaction percentage per initial state."""
        c = self.controllers.index(controller)
        return 100.0 * self.constraint_ok[c].mean(axis=1)

    def summary(self) -> dict:
        quant_levels = [0.05, 0.25, 0.5, 0.75, 0.95]
        ratio_quantiles = {}
        satisfaction = {}
        histograms = {}
        trend_ok = True
        base_pct = self.satisfaction_percent(self.controllers[0])
        for name in self.controllers[1:]:
            ratios, missing = self.performance_ratios(name)
            lymph, _ = self.lymphocyte_ratios(name)
            mean_ratio = float(ratios.mean()) if ratios.size else float("nan")
            ratio_quantiles[name] = {
                "mean": mean_ratio,
                "quantiles": {str(ql): float(np.quantile(ratios, ql))
                              for ql in quant_levels} if ratios.size else {},
                "missing": missing,
                "lymphocyte_mean": float(lymph.mean()) if lymph.size else float("nan"),
            }
            if ratios.size:
                counts, edges = np.histogram(ratios, bins=50)
                histograms[name] = {"edges": edges.tolist(), "counts": counts.tolist()}
            pct = self.satisfaction_percent(name)
            satisfaction[name] = {
                "improvement_per_x0": (pct - base_pct).tolist(),
                "mean_improvement": float((pct - base_pct).mean()),
            }
            if not (np.isfinite(mean_ratio) and mean_ratio < 1.0):
                trend_ok = False
        return {
            "controllers": self.controllers,
            "pairs": self.n_x0 * self.n_p,
            "ratio_quantiles": ratio_quantiles,
            "satisfaction_improvement": satisfaction,
            "histograms": histograms,
            "trend": {
                "statement": "stochastic controllers outperform the nominal on average",
                "status": "pass" if trend_ok else "warn",
            },
        }

    def save_summary(self, path, extra: dict | None = None) -> None:
        payload = self.summary()
        if extra:
            payload.update(extra)
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")


def evaluate_monte_carlo(policies: dict[str, FeedbackPolicy],
                         eval_model: UncertaintyModel,
                         n_x0: int, n_p: int, n_sim: int,
                         seed_x0: int, seed_p: int,
                         tau: float, cost: CostParams | None = None) -> EvalReport:
    """Paired closed-loop comparison over seeded (x0, parameter) draws.

    Initial states are uniform on the normalized box [0,1]^4; every
    controller sees the identical pair sequence.
    """
    if n_x0 < 1 or n_p < 1:
        raise ValueError("n_x0 and n_p must be >= 1")
    if not policies:
        raise ValueError("need at least one controller")
    cost = cost or CostParams()
    names = list(policies)
    rng_x0 = np.random.default_rng(seed_x0)
    x0 = rng_x0.uniform(0.0, 1.0, size=(n_x0, 4))
    params = sample_params(eval_model, n_x0 * n_p, seed=seed_p)
    params_arr = np.array([p.uncertain_array() for p in params])
    x0_rep = np.repeat(x0, n_p, axis=0)

    shape = (len(names), n_x0, n_p)
    j_cl = np.empty(shape)
    mean_x2 = np.empty(shape)
    min_x2 = np.empty(shape)
    ok = np.empty(shape, dtype=bool)
    for c, name in enumerate(names):
        j, mn, mean, good = _simulate_batch(
            x0_rep, params_arr, eval_model.nominal.h, policies[name],
            n_sim, tau, cost,
        )
        j_cl[c] = j.reshape(n_x0, n_p)
        min_x2[c] = mn.reshape(n_x0, n_p)
        mean_x2[c] = mean.reshape(n_x0, n_p)
        ok[c] = good.reshape(n_x0, n_p)
    return EvalReport(controllers=names, n_x0=n_x0, n_p=n_p, n_sim=n_sim,
                      j_cl=j_cl, mean_x2=mean_x2, min_x2=min_x2, constraint_ok=ok)
