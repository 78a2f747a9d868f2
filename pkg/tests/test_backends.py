import os
import subprocess
import sys

import numpy as np
import pytest

from chemodp import backends


@pytest.fixture(scope="module")
def impls():
    return backends.get_impls("numpy"), backends.get_impls("numba")


@pytest.fixture(scope="module")
def data():
    rng = np.random.default_rng(14)
    return {
        "a": rng.uniform(0, 1, size=(40, 6)),
        "b": rng.uniform(0, 1, size=(30, 6)),
        "beta": rng.normal(size=30),
        "next_states": rng.uniform(0, 1.5, size=(25, 4, 4)),
        "state_centers": rng.uniform(0, 1, size=(16, 4)),
        "coef": rng.normal(size=(16, 4)),
        "weights": np.full(4, 0.25),
        "x": rng.uniform(0, 1, size=(50, 4)),
    }


def test_kernel_matrix_agreement(impls, data):
    np_impl, nb_impl = impls
    a = np_impl["kernel_matrix"](data["a"], data["b"], 2.0)
    b = nb_impl["kernel_matrix"](data["a"], data["b"], 2.0)
    assert a.shape == (40, 30)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-14)
    assert a.max() <= 1.0


def test_rbf_predict_agreement(impls, data):
    np_impl, nb_impl = impls
    a = np_impl["rbf_predict"](data["a"], data["b"], data["beta"], 0.3, 2.0)
    b = nb_impl["rbf_predict"](data["a"], data["b"], data["beta"], 0.3, 2.0)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-13)


def test_bellman_stats_agreement(impls, data):
    np_impl, nb_impl = impls
    args = (data["next_states"], data["state_centers"], data["coef"],
            0.1, 1.5, data["weights"], 0.1)
    s_np, e_np = np_impl["bellman_stats"](*args)
    s_nb, e_nb = nb_impl["bellman_stats"](*args)
    assert np.allclose(s_np, s_nb, rtol=1e-12, atol=1e-13)
    assert np.allclose(e_np, e_nb, rtol=1e-12, atol=1e-13)


def test_bellman_stats_against_direct_formula(impls, data):
    # brute-force recomputation of mean/variance/min from raw predictions
    np_impl, _ = impls
    ns, sc, coef = data["next_states"], data["state_centers"], data["coef"]
    w, alpha, bw, beta0 = data["weights"], 0.2, 1.5, 0.1
    s, e = np_impl["bellman_stats"](ns, sc, coef, beta0, bw, w, alpha)
    for i in range(ns.shape[0]):
        preds = np.empty((ns.shape[1], 4))
        for j in range(ns.shape[1]):
            g = np.exp(-bw * ((ns[i, j] - sc) ** 2).sum(axis=1))
            preds[j] = beta0 + g @ coef
        mu = w @ preds
        var = w @ (preds - mu) ** 2
        assert s[i] == pytest.approx(np.min(mu + alpha * var), rel=1e-12)
        assert e[i] == pytest.approx(np.abs(preds - mu).max(), rel=1e-12)


def test_dose_argmin_agreement(impls, data):
    np_impl, nb_impl = impls
    a = np_impl["dose_argmin"](data["x"], data["state_centers"], data["coef"], 0.0, 1.5)
    b = nb_impl["dose_argmin"](data["x"], data["state_centers"], data["coef"], 0.0, 1.5)
    assert np.array_equal(a, b)


def test_dose_argmin_tie_breaks_to_first(impls, data):
    np_impl, nb_impl = impls
    coef = np.zeros((16, 4))  # all doses predict identically
    a = np_impl["dose_argmin"](data["x"], data["state_centers"], coef, 1.0, 1.5)
    b = nb_impl["dose_argmin"](data["x"], data["state_centers"], coef, 1.0, 1.5)
    assert np.all(a == 0) and np.all(b == 0)


def test_backend_determinism(impls, data):
    for table in impls:
        s1, e1 = table["bellman_stats"](data["next_states"], data["state_centers"],
                                        data["coef"], 0.1, 1.5, data["weights"], 0.1)
        s2, e2 = table["bellman_stats"](data["next_states"], data["state_centers"],
                                        data["coef"], 0.1, 1.5, data["weights"], 0.1)
        assert np.array_equal(s1, s2) and np.array_equal(e1, e2)


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        backends.get_impls("fortran")


def test_active_backend_exposed():
    assert backends.BACKEND in ("numba", "numpy")


@pytest.mark.parametrize("requested", ["numpy", "numba"])
def test_env_flag_selects_backend(requested):
    proc = subprocess.run(
        [sys.executable, "-c", "from chemodp import backends; print(backends.BACKEND)"],
        env={**os.environ, "CHEMODP_BACKEND": requested},
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.strip() == requested


def test_env_flag_rejects_unknown():
    proc = subprocess.run(
        [sys.executable, "-c", "import chemodp.backends"],
        env={**os.environ, "CHEMODP_BACKEND": "gpu"},
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode != 0
    assert "CHEMODP_BACKEND" in proc.stderr
