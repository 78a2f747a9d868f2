import numpy as np
import pytest

from chemodp.model import (
    CostParams,
    DoseSet,
    ModelParams,
    continuous_rhs,
    denormalize,
    euler_step,
    normalize,
    phi_matrix,
    psi_vector,
    stage_cost,
)
from chemodp.uncertainty import UncertaintyModel, sample_params


def test_nominal_values(nominal):
    assert nominal.a == 0.25
    assert nominal.b == 1.02e-14
    assert nominal.c1 == 4.41e-10
    assert nominal.g == 1.5e-2
    assert nominal.h == 20.2
    assert nominal.k1 == 0.8
    assert nominal.k2 == 0.6 == nominal.k3
    assert nominal.p0 == 2e-11
    assert nominal.r == 0.04
    assert nominal.s1 == 1.2e7
    assert nominal.s2 == 7.5e6
    assert nominal.delta == 1.2e-2
    assert nominal.gamma0 == 0.9


def test_params_must_be_positive():
    with pytest.raises(ValueError):
        ModelParams(a=0.0)
    with pytest.raises(ValueError):
        ModelParams(s2=-1.0)
    with pytest.raises(ValueError):
        ModelParams(gamma0=float("nan"))


def test_rhs_zero_state(nominal):
    # only the constant lymphocyte source survives
    d = continuous_rhs([0, 0, 0, 0], [0, 0], nominal)
    assert np.array_equal(d, [0.0, 7.5e6, 0.0, 0.0])


def test_rhs_chemo_decay(nominal):
    d = continuous_rhs([0, 0, 1, 0], [0, 0], nominal)
    assert np.array_equal(d, [0.0, 7.5e6, -0.9, 0.0])


def test_rhs_logistic_term(nominal):
    d = continuous_rhs([1e9, 0, 0, 0], [0, 0], nominal)
    assert d[0] == pytest.approx(0.25 * 1e9 * (1 - 1.02e-14 * 1e9), rel=1e-14)


def test_rhs_rejects_nonfinite(nominal):
    with pytest.raises(ValueError):
        continuous_rhs([np.nan, 0, 0, 0], [0, 0], nominal)


def test_psi_nominal_entries(nominal):
    psi = psi_vector(nominal)
    assert psi.shape == (14,)
    assert psi[0] == 1.0
    assert psi[1] == 0.25
    assert psi[2] == 0.25 * 1.02e-14


def test_psi_constant_first_entry():
    for p in sample_params(UncertaintyModel(seed=5), 20):
        assert psi_vector(p)[0] == 1.0


def test_psi_linear_in_a(nominal):
    psi = psi_vector(nominal)
    doubled = psi_vector(ModelParams(a=2 * nominal.a))
    assert doubled[1] == 2 * psi[1]
    assert doubled[2] == 2 * psi[2]
    keep = [0] + list(range(3, 14))
    assert np.array_equal(doubled[keep], psi[keep])


def test_phi_zero_state():
    phi = phi_matrix([0, 0, 0, 0], [0, 1], 0.25, 20.2)
    assert phi[2, 0] == 0.25          # chemo input in the constant column
    assert phi[1, 7] == 0.25          # lymphocyte source column
    mask = np.ones_like(phi, dtype=bool)
    mask[2, 0] = mask[1, 7] = False
    assert np.all(phi[mask] == 0.0)


def test_phi_zero_tau_is_identity(nominal):
    x = np.array([1e9, 1e9, 1.0, 1e9])
    for p in [nominal, ModelParams(a=0.5), ModelParams(k3=1.2)]:
        out = phi_matrix(x, [0, 0], 0.0, p.h) @ psi_vector(p)
        assert np.array_equal(out, x)


def test_factorization_identity_random(nominal, doses):
    # 1000 seeded (x, u, p): phi @ psi matches the Euler step wherever the
    # nonnegativity clamp is inactive
    rng = np.random.default_rng(42)
    params = sample_params(UncertaintyModel(seed=7), 1000)
    dose_values = doses.values
    for i in range(1000):
        x = denormalize(rng.uniform(0, 1, 4))
        u = dose_values[rng.integers(0, 4)]
        p = params[i]
        raw = x + 0.25 * continuous_rhs(x, u, p)
        if np.any(raw < 0):
            continue
        fact = phi_matrix(x, u, 0.25, p.h) @ psi_vector(p)
        step = euler_step(x, u, p, 0.25)
        assert np.all(np.abs(fact - step) <= 1e-10 * (1 + np.abs(step)))


def test_euler_dose_only(nominal):
    out = euler_step([0, 0, 0, 0], [0, 1], nominal, 0.25)
    assert np.array_equal(out, [0.0, 1.875e6, 0.25, 0.0])


def test_euler_chemo_decay(nominal):
    out = euler_step([0, 0, 1, 0], [0, 0], nominal, 0.25)
    assert out[2] == pytest.approx(0.775, abs=1e-15)


def test_euler_zero_tau_identity(nominal):
    rng = np.random.default_rng(1)
    for _ in range(20):
        x = denormalize(rng.uniform(0, 1, 4))
        assert np.array_equal(euler_step(x, [1, 1], nominal, 0.0), x)


def test_euler_clamps_nonnegative(nominal):
    # heavy chemo kill on a tiny lymphocyte pool can overshoot below zero
    p = ModelParams(k2=600.0)
    out = euler_step([0, 1e3, 1.0, 0], [0, 0], p, 0.25)
    assert np.all(out >= 0)


def test_normalize_reference_point():
    assert np.array_equal(normalize([1e9, 1e9, 1.0, 1e9]), [1, 1, 1, 1])
    assert np.array_equal(normalize([0, 0, 0, 0]), [0, 0, 0, 0])
    assert np.array_equal(denormalize([1, 1, 1, 1]), [1e9, 1e9, 1.0, 1e9])


def test_normalize_roundtrip():
    rng = np.random.default_rng(2)
    x = rng.uniform(0, 1e12, size=(200, 4))
    back = denormalize(normalize(x))
    # componentwise rescaling by 1e9 is not exactly invertible in binary
    # floating point; a 1-ulp excursion is the worst case
    np.testing.assert_array_max_ulp(back, x, maxulp=1)
    exact = np.array([1e9, 1e9, 1.0, 1e9])
    assert np.array_equal(denormalize(normalize(exact)), exact)


def test_stage_cost_zero(cost):
    assert stage_cost([0, 0.5, 0, 0], [0, 0], cost) == 0.0


def test_stage_cost_tumor_only(cost):
    assert stage_cost([0.5, 0.1, 0, 0], [0, 0], cost) == 0.25


def test_stage_cost_violation_and_dose(cost):
    val = stage_cost([0.5, 0.02, 0, 0], [1, 1], cost)
    assert val == pytest.approx(0.57, abs=1e-15)


def test_stage_cost_monotone(cost):
    rng = np.random.default_rng(3)
    for _ in range(200):
        x = rng.uniform(0, 1, 4)
        u = rng.uniform(0, 1, 2)
        base = stage_cost(x, u, cost)
        assert base >= 0
        worse_tumor = x.copy()
        worse_tumor[0] = min(1.0, x[0] + 0.1)
        assert stage_cost(worse_tumor, u, cost) >= base
        worse_lymph = x.copy()
        worse_lymph[1] = max(0.0, x[1] - 0.1)
        assert stage_cost(worse_lymph, u, cost) >= base


def test_parameter_separation(nominal):
    # phi depends on no rate constant besides h; psi ignores (x, u, tau)
    x = denormalize([0.3, 0.7, 0.5, 0.2])
    u = [1.0, 0.0]
    phi_a = phi_matrix(x, u, 0.25, nominal.h)
    phi_b = phi_matrix(x, u, 0.25, ModelParams(a=1.0, k2=0.1, s2=1e3).h)
    assert np.array_equal(phi_a, phi_b)
    assert not np.array_equal(phi_a, phi_matrix(x, u, 0.25, 40.0))
    assert np.array_equal(psi_vector(nominal), psi_vector(ModelParams.nominal()))


def test_dose_set_order(doses):
    assert np.array_equal(doses.values, [[0, 0], [0, 1], [1, 0], [1, 1]])
    custom = DoseSet(u1_max=2.0, u2_max=3.0)
    assert np.array_equal(custom.values, [[0, 0], [0, 3.0], [2.0, 0], [2.0, 3.0]])
    assert np.array_equal(custom.encodings, [[0, 0], [0, 1], [1, 0], [1, 1]])
    assert np.array_equal(custom.encode([2.0, 0.0]), [1.0, 0.0])


def test_cost_params_validation():
    with pytest.raises(ValueError):
        CostParams(x2_min=0.0)
    with pytest.raises(ValueError):
        CostParams(rho_c=-1.0)
