import numpy as np
import pytest
from scipy import stats

from chemodp.model import ModelParams, psi_matrix, psi_vector
from chemodp.uncertainty import (
    ClusterSet,
    UncertaintyModel,
    cluster_psi,
    sample_params,
)


def test_dirac_returns_nominal_copies(nominal):
    model = UncertaintyModel(dirac=True)
    out = sample_params(model, 5)
    assert len(out) == 5
    assert all(p == nominal for p in out)


def test_sampling_deterministic():
    model = UncertaintyModel(seed=123)
    a = sample_params(model, 50)
    b = sample_params(model, 50)
    assert a == b
    c = sample_params(model, 50, seed=124)
    assert a != c


def test_all_sampled_params_positive():
    model = UncertaintyModel(relative_std=0.8, seed=5)
    for p in sample_params(model, 500):
        assert min(p.uncertain_array()) > 0
        # truncation keeps every factor above 1% of nominal
        assert np.all(p.uncertain_array() > 0.01 * ModelParams.nominal().uncertain_array())


def test_truncated_mean_matches_quadrature_oracle(nominal):
    # independent oracle: scipy truncnorm mean of the factor 1 + nu given
    # 1 + nu > 0.01, nu ~ N(0, 0.4^2)
    model = UncertaintyModel(relative_std=0.4, seed=77)
    n = 10_000
    sample = np.array([p.uncertain_array() for p in sample_params(model, n)])
    lo = (0.01 - 1.0) / 0.4
    expected_factor = stats.truncnorm.mean(lo, np.inf, loc=1.0, scale=0.4)
    base = nominal.uncertain_array()
    mean = sample.mean(axis=0)
    se = sample.std(axis=0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(mean - expected_factor * base) <= 4.0 * se)


def test_model_validation():
    with pytest.raises(ValueError):
        UncertaintyModel(relative_std=-0.1)
    with pytest.raises(ValueError):
        UncertaintyModel(sample_count=10, cluster_count=11)
    with pytest.raises(ValueError):
        UncertaintyModel(truncation=0.0)


def test_single_cluster_is_sample_mean():
    rng = np.random.default_rng(8)
    pts = rng.normal(size=(40, 14))
    cs = cluster_psi(pts, 1, seed=0)
    assert len(cs) == 1
    assert np.allclose(cs.centers[0], pts.mean(axis=0), rtol=1e-12, atol=0)
    assert cs.weights[0] == 1.0


def test_weights_partition_the_sample():
    rng = np.random.default_rng(9)
    pts = rng.normal(size=(300, 14)) * 10 ** rng.uniform(-8, 8, size=14)
    for k in (2, 5, 9):
        cs = cluster_psi(pts, k, seed=k)
        assert abs(cs.weights.sum() - 1.0) <= 1e-12
        assert np.all(cs.weights > 0)


def test_distinct_count_clusters_returns_samples():
    base = np.arange(14, dtype=float)
    rows = np.stack([base, base, base + 1.0, base + 2.0, base + 2.0, base + 2.0])
    cs = cluster_psi(rows, 3, seed=0)
    # distinct points come back exactly, weighted by multiplicity
    order = np.argsort(cs.centers[:, 0])
    assert np.array_equal(cs.centers[order], np.stack([base, base + 1.0, base + 2.0]))
    assert np.allclose(cs.weights[order], [2 / 6, 1 / 6, 3 / 6], atol=1e-15)


def test_too_many_clusters_warns_and_reduces():
    rows = np.tile(np.arange(14.0), (10, 1))
    rows[5:] += 1.0
    with pytest.warns(UserWarning, match="distinct"):
        cs = cluster_psi(rows, 5, seed=0)
    assert len(cs) == 2


def test_dirac_cluster_center_exact(nominal, dirac_clusters):
    assert len(dirac_clusters) == 1
    assert np.array_equal(dirac_clusters.centers[0], psi_vector(nominal))
    assert dirac_clusters.weights[0] == 1.0


def test_clustering_bitwise_deterministic():
    params = sample_params(UncertaintyModel(seed=21), 400)
    psis = psi_matrix(params)
    a = cluster_psi(psis, 6, seed=3)
    b = cluster_psi(psis, 6, seed=3)
    assert np.array_equal(a.centers, b.centers)
    assert np.array_equal(a.weights, b.weights)
    assert a.sse_history == b.sse_history


def test_lloyd_sse_non_increasing():
    params = sample_params(UncertaintyModel(seed=31), 600)
    psis = psi_matrix(params)
    cs = cluster_psi(psis, 8, seed=4)
    hist = cs.sse_history
    assert len(hist) >= 1
    assert all(b <= a * (1 + 1e-9) for a, b in zip(hist, hist[1:]))


def test_centroid_first_entry_exactly_one():
    params = sample_params(UncertaintyModel(seed=41), 500)
    cs = cluster_psi(psi_matrix(params), 7, seed=5)
    assert np.all(cs.centers[:, 0] == 1.0)


def test_cluster_csv_roundtrip(tmp_path, small_clusters):
    path = tmp_path / "clusters.csv"
    small_clusters.save_csv(path)
    loaded = ClusterSet.load_csv(path)
    assert np.array_equal(loaded.centers, small_clusters.centers)
    assert np.array_equal(loaded.weights, small_clusters.weights)


def test_cluster_set_validation():
    with pytest.raises(ValueError):
        ClusterSet(centers=np.zeros((2, 14)), weights=np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        ClusterSet(centers=np.zeros((2, 14)), weights=np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        ClusterSet(centers=np.zeros((2, 13)), weights=np.array([0.5, 0.5]))
