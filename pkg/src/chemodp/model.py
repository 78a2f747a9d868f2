"""Tumor / immune / chemotherapy population dynamics and stage cost.

State vector (raw biological units):

    x1  tumor cell population               (cells)
    x2  circulating lymphocyte population   (cells)
    x3  chemotherapy drug concentration     (dimensionless)
    x4  effector immune cell population     (cells)

Controls are the immune-cell introduction rate u1 and the chemotherapy
introduction rate u2, each quantized to {0, max}.

The continuous dynamics are

    dx1 = a*x1*(1 - b*x1) - c1*x4*x1 - k3*x3*x1
    dx2 = -delta*x2 - k2*x3*x2 + s2
    dx3 = -gamma0*x3 + u2
    dx4 = g*x1/(h + x1)*x4 - r*x4 - p0*x4*x1 - k1*x4*x3 + s1*u1

discretized by explicit forward Euler with period `tau` (days) and clamped
to the nonnegative orthant.  Because every right-hand side is affine in the
rate constants, the Euler step factorizes as

    x_plus = phi_matrix(x, u, tau, h) @ psi_vector(p)

where the 14-entry feature vector collects the constant 1 and the 13
uncertain rate monomials.  The saturation constant h is treated as known
(it only matters when the tumor is nearly gone) so it lives on the state
side of the factorization.

Raw states and normalized states (componentwise division by
(1e9, 1e9, 1, 1e9)) are kept distinct by convention: dynamics run in raw
units, costs and regression in normalized units, with `normalize` /
`denormalize` the only converters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

# Reference scales for state normalization.
REF_SCALE = np.array([1e9, 1e9, 1.0, 1e9])

# Uncertain rate constants, fixed serialization order (h excluded: known).
PARAM_FIELDS = (
    "a", "b", "c1", "g", "k1", "k2", "k3", "p0", "r", "s1", "s2", "delta", "gamma0",
)

# psi_vector component layout: [1, a, a*b, c1, k3, delta, k2, s2, gamma0, g, r, p0, k1, s1]
PSI_DIM = 14
PSI_NAMES = (
    "const", "a", "ab", "c1", "k3", "delta", "k2", "s2",
    "gamma0", "g", "r", "p0", "k1", "s1",
)


@dataclass(frozen=True)
class ModelParams:
    """Rate constants of the combined-therapy model (raw units, per day)."""

    a: float = 0.25          # tumor growth rate
    b: float = 1.02e-14      # inverse tumor carrying capacity
    c1: float = 4.41e-10     # tumor kill by effector cells
    g: float = 1.5e-2        # effector stimulation by tumor
    h: float = 20.2          # stimulation saturation (known constant)
    k1: float = 0.8          # effector kill by chemo
    k2: float = 0.6          # lymphocyte kill by chemo
    k3: float = 0.6          # tumor kill by chemo
    p0: float = 2e-11        # effector inactivation by tumor
    r: float = 0.04          # effector death rate
    s1: float = 1.2e7        # effector influx per unit u1
    s2: float = 7.5e6        # constant lymphocyte source
    delta: float = 1.2e-2    # lymphocyte death rate
    gamma0: float = 0.9      # chemo decay rate

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v <= 0.0:
                raise ValueError(f"ModelParams.{f.name} must be finite and > 0, got {v!r}")

    @classmethod
    def nominal(cls) -> "ModelParams":
        """The standard literature values (the dataclass defaults)."""
        return cls()

    def uncertain_array(self) -> np.ndarray:
        """The 13 uncertain constants in PARAM_FIELDS order."""
        return np.array([getattr(self, name) for name in PARAM_FIELDS])

    @classmethod
    def from_uncertain_array(cls, arr: np.ndarray, h: float = 20.2) -> "ModelParams":
        kw = {name: float(v) for name, v in zip(PARAM_FIELDS, arr)}
        return cls(h=h, **kw)


# Column indices into a (n, 13) uncertain-parameter array.
_IA, _IB, _IC1, _IG, _IK1, _IK2, _IK3, _IP0, _IR, _IS1, _IS2, _IDELTA, _IGAMMA0 = range(13)


@dataclass(frozen=True)
class CostParams:
    """Stage-cost weights (normalized-state units)."""

    rho_c: float = 10.0      # soft lymphocyte-floor penalty weight
    rho_1: float = 0.01      # immune dose weight
    rho_2: float = 0.01      # chemo dose weight
    x2_min: float = 0.05     # normalized lymphocyte floor

    def __post_init__(self):
        if min(self.rho_c, self.rho_1, self.rho_2) < 0:
            raise ValueError("cost weights must be >= 0")
        if not 0.0 < self.x2_min < 1.0:
            raise ValueError(f"x2_min must lie in (0, 1), got {self.x2_min!r}")


@dataclass(frozen=True)
class DoseSet:
    """The four admissible on/off dose combinations, in fixed order.

    Enumeration order is [(0,0), (0,u2_max), (u1_max,0), (u1_max,u2_max)];
    ties in dose selection are always broken toward the earliest entry.
    """

    u1_max: float = 1.0
    u2_max: float = 1.0

    def __post_init__(self):
        if self.u1_max <= 0 or self.u2_max <= 0:
            raise ValueError("dose magnitudes must be > 0")

    @property
    def values(self) -> np.ndarray:
        """Raw dose rates, shape (4, 2)."""
        return np.array([
            [0.0, 0.0],
            [0.0, self.u2_max],
            [self.u1_max, 0.0],
            [self.u1_max, self.u2_max],
        ])

    @property
    def encodings(self) -> np.ndarray:
        """Unit-scaled dose coordinates used in kernel space, shape (4, 2)."""
        return np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])

    def encode(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return u / np.array([self.u1_max, self.u2_max])


def rhs_batch(x: np.ndarray, u: np.ndarray, params: np.ndarray, h: float) -> np.ndarray:
    """Continuous-time derivatives for a batch of states.

    x: (..., 4) raw states, u: (..., 2) raw doses, params: (..., 13) in
    PARAM_FIELDS order (broadcastable against x).  Returns (..., 4).
    """
    x1, x2, x3, x4 = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    u1, u2 = u[..., 0], u[..., 1]
    p = params
    d1 = p[..., _IA] * x1 * (1.0 - p[..., _IB] * x1) - p[..., _IC1] * x4 * x1 - p[..., _IK3] * x3 * x1
    d2 = -p[..., _IDELTA] * x2 - p[..., _IK2] * x3 * x2 + p[..., _IS2]
    d3 = -p[..., _IGAMMA0] * x3 + u2
    d4 = (p[..., _IG] * x1 / (h + x1) * x4 - p[..., _IR] * x4
          - p[..., _IP0] * x4 * x1 - p[..., _IK1] * x4 * x3 + p[..., _IS1] * u1)
    return np.stack([d1, d2, d3, d4], axis=-1)


def continuous_rhs(x, u, p: ModelParams) -> np.ndarray:
    """Time derivative of a single raw state under dose u and parameters p."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise ValueError("continuous_rhs: non-finite state or dose")
    return rhs_batch(x, u, p.uncertain_array(), p.h)


def euler_step_batch(x: np.ndarray, u: np.ndarray, params: np.ndarray,
                     tau: float, h: float) -> np.ndarray:
    """Forward Euler step clamped to the nonnegative orthant (batch)."""
    out = x + tau * rhs_batch(x, u, params, h)
    return np.maximum(out, 0.0)


def euler_step(x, u, p: ModelParams, tau: float) -> np.ndarray:
    """One clamped forward Euler step for a single raw state."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    out = euler_step_batch(x, u, p.uncertain_array(), tau, p.h)
    if not np.all(np.isfinite(out)):
        raise OverflowError(f"euler_step produced non-finite state from x={x!r}, u={u!r}")
    return out


def psi_vector(p: ModelParams) -> np.ndarray:
    """Parameter feature vector [1, a, a*b, c1, k3, delta, k2, s2, gamma0, g, r, p0, k1, s1]."""
    return np.array([
        1.0, p.a, p.a * p.b, p.c1, p.k3, p.delta, p.k2, p.s2,
        p.gamma0, p.g, p.r, p.p0, p.k1, p.s1,
    ])


def psi_matrix(params: "list[ModelParams]") -> np.ndarray:
    """Stack psi_vector over a parameter sample, shape (n, 14)."""
    return np.array([psi_vector(p) for p in params])


def phi_matrix(x, u, tau: float, h: float) -> np.ndarray:
    """State/control basis matrix of the factorized Euler step, shape (4, 14).

    phi_matrix(x, u, tau, h) @ psi_vector(p) equals the unclamped Euler step
    x + tau * f(x, u, p) for every parameter vector p.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    x1, x2, x3, x4 = x
    u1, u2 = u
    phi = np.zeros((4, PSI_DIM))
    # row 1: tumor
    phi[0, 0] = x1
    phi[0, 1] = tau * x1
    phi[0, 2] = -tau * x1 * x1
    phi[0, 3] = -tau * x4 * x1
    phi[0, 4] = -tau * x3 * x1
    # row 2: lymphocytes
    phi[1, 0] = x2
    phi[1, 5] = -tau * x2
    phi[1, 6] = -tau * x3 * x2
    phi[1, 7] = tau
    # row 3: chemo concentration
    phi[2, 0] = x3 + tau * u2
    phi[2, 8] = -tau * x3
    # row 4: effector cells
    phi[3, 0] = x4
    phi[3, 9] = tau * x4 * x1 / (h + x1)
    phi[3, 10] = -tau * x4
    phi[3, 11] = -tau * x4 * x1
    phi[3, 12] = -tau * x4 * x3
    phi[3, 13] = tau * u1
    return phi


def next_states_psi(x: np.ndarray, u: np.ndarray, psi: np.ndarray,
                    tau: float, h: float) -> np.ndarray:
    """Clamped Euler successors for raw states under a set of psi vectors.

    x: (n, 4) raw states, u: (n, 2) raw doses, psi: (m, 14).  Returns
    (n, m, 4): the product phi_matrix(x_i, u_i) @ psi_j, written out
    componentwise and clamped to >= 0.
    """
    x1 = x[:, 0:1]
    x2 = x[:, 1:2]
    x3 = x[:, 2:3]
    x4 = x[:, 3:4]
    u1 = u[:, 0:1]
    u2 = u[:, 1:2]
    ps = psi.T  # (14, m), broadcast rows against (n, 1)
    n1 = x1 * ps[0] + tau * x1 * ps[1] - tau * x1 * x1 * ps[2] \
        - tau * x4 * x1 * ps[3] - tau * x3 * x1 * ps[4]
    n2 = x2 * ps[0] - tau * x2 * ps[5] - tau * x3 * x2 * ps[6] + tau * ps[7]
    n3 = (x3 + tau * u2) * ps[0] - tau * x3 * ps[8]
    n4 = x4 * ps[0] + tau * x4 * x1 / (h + x1) * ps[9] - tau * x4 * ps[10] \
        - tau * x4 * x1 * ps[11] - tau * x4 * x3 * ps[12] + tau * u1 * ps[13]
    return np.maximum(np.stack([n1, n2, n3, n4], axis=-1), 0.0)


def normalize(x_raw) -> np.ndarray:
    """Raw state -> normalized state (componentwise division by REF_SCALE)."""
    return np.asarray(x_raw, dtype=float) / REF_SCALE


def denormalize(x_norm) -> np.ndarray:
    """Normalized state -> raw state."""
    return np.asarray(x_norm, dtype=float) * REF_SCALE


def stage_cost(x_norm, u, cost: CostParams) -> np.ndarray | float:
    """Per-step cost: tumor burden, soft lymphocyte floor, dose usage.

    x_norm: (..., 4) normalized states, u: (..., 2) raw doses.
    """
    x = np.asarray(x_norm, dtype=float)
    uu = np.asarray(u, dtype=float)
    violation = np.maximum(0.0, cost.x2_min - x[..., 1])
    out = x[..., 0] ** 2 + cost.rho_c * violation + cost.rho_1 * uu[..., 0] + cost.rho_2 * uu[..., 1]
    if out.ndim == 0:
        return float(out)
    return out
