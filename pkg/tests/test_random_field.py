import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochbddc.mesh_fem import build_mesh
from stochbddc.random_field import (CovarianceSpec, KLError, covariance, discrete_kl,
                                    evaluate_field, evaluate_kappa, global_kl, load_kl,
                                    local_coordinates, local_kl, sample_seeds, sample_xi,
                                    save_kl)

SPEC = CovarianceSpec(0.5, 1.0)


def test_spec_validation():
    with pytest.raises(ValueError):
        CovarianceSpec(0.0, 1.0)
    with pytest.raises(ValueError):
        CovarianceSpec(1.0, -1.0)


def test_covariance_values():
    x = np.array([0.2, 0.3])
    assert covariance(x, x, SPEC) == 0.5
    assert abs(covariance(np.zeros(2), np.array([1.0, 0.0]), SPEC) - 0.5 * np.exp(-1)) < 1e-15


@given(st.lists(st.floats(0, 1), min_size=4, max_size=4))
@settings(max_examples=30, deadline=None)
def test_covariance_symmetry(v):
    x, y = np.array(v[:2]), np.array(v[2:])
    assert covariance(x, y, SPEC) == covariance(y, x, SPEC)


def test_kl_basic_invariants():
    m = build_mesh(2, 4)
    b = global_kl(m, SPEC, 10, method="dense")
    assert np.all(np.diff(b.lambdas) <= 0) and np.all(b.lambdas >= 0)
    gram = b.modes.T @ (b.modes * b.weights[:, None])
    np.testing.assert_allclose(gram, np.eye(10), atol=1e-10)
    # sign convention: the first entry of (near-)largest magnitude is positive
    mag = np.abs(b.modes)
    idx = (mag >= (1 - 1e-6) * mag.max(axis=0)).argmax(axis=0)
    assert np.all(b.modes[idx, np.arange(10)] > 0)
    assert abs(b.spectrum.sum() - 0.5) < 1e-8            # sigma^2 * area
    errs = [b.truncation_error(k) for k in range(1, 10)]
    assert np.all(np.diff(errs) <= 1e-15)


def test_dense_and_iterative_agree():
    m = build_mesh(4, 4)
    a = global_kl(m, SPEC, 6, method="dense")
    b = global_kl(m, SPEC, 6, method="iterative")
    np.testing.assert_allclose(a.lambdas, b.lambdas, rtol=1e-9)
    # leading modes are simple; compare them
    np.testing.assert_allclose(a.modes[:, :1], b.modes[:, :1], atol=1e-7)


def test_kl_reorder_invariance():
    m = build_mesh(2, 4)
    perm = np.random.default_rng(0).permutation(m.n_cells)
    a = discrete_kl(m.centroids, m.areas, SPEC, 5)
    b = discrete_kl(m.centroids[perm], m.areas[perm], SPEC, 5)
    np.testing.assert_allclose(a.lambdas, b.lambdas, rtol=1e-8)


def test_global_fraction_four_modes():
    b = global_kl(build_mesh(8, 16), SPEC, 4)        # 128 cells per side
    assert abs(b.energy_fraction(4) - 0.982) <= 0.005


def test_local_fraction_64_subdomains():
    m = build_mesh(8, 8)
    b = local_kl(m, SPEC, 1, 27)
    assert abs(b.energy_fraction(1) - 0.995) <= 0.005


def test_sampling_reproducible():
    a, b = sample_xi(7, 5), sample_xi(7, 5)
    assert np.array_equal(a.xi, b.xi)
    assert not np.array_equal(a.xi, sample_xi(8, 5).xi)
    with pytest.raises(ValueError):
        sample_xi(1, 0)


def test_sampling_moments():
    x = sample_xi(123, 100_000).xi
    assert abs(x.mean()) < 0.02 and abs(x.var() - 1) < 0.02


def test_seed_stream():
    s = sample_seeds(5, 10)
    assert s.dtype == np.uint64 and len(set(s.tolist())) == 10
    assert np.array_equal(s, sample_seeds(5, 10))
    assert np.array_equal(sample_seeds(5, 4), s[:4])


def test_evaluate_field():
    b = global_kl(build_mesh(2, 2), SPEC, 3)
    assert np.all(evaluate_kappa(b, np.zeros(3)) == 1.0)
    np.testing.assert_allclose(evaluate_field(b, [1.0, 0, 0]), np.sqrt(b.lambdas[0]) * b.modes[:, 0])
    assert np.all(evaluate_kappa(b, 10 * np.ones(3)) > 0)
    with pytest.raises(ValueError):
        evaluate_field(b, np.zeros(2))


def test_local_coordinates():
    m = build_mesh(2, 4)
    loc = local_kl(m, SPEC, 3, 1)
    assert np.all(local_coordinates(np.zeros(loc.modes.shape[0]), loc) == 0)
    field = np.sqrt(loc.lambdas[1]) * loc.modes[:, 1]
    np.testing.assert_allclose(local_coordinates(field, loc), [0, 1, 0], atol=1e-10)


def test_local_coordinates_identity_case():
    m = build_mesh(1, 6)
    glob = global_kl(m, SPEC, 4)
    loc = local_kl(m, SPEC, 4, 0)
    xi = sample_xi(3, 4).xi
    np.testing.assert_allclose(local_coordinates(evaluate_field(glob, xi), loc), xi, atol=1e-10)


def test_rank_deficiency_detected():
    # two coincident points: the kernel has rank one
    b = discrete_kl(np.zeros((2, 2)), np.array([0.5, 0.5]), CovarianceSpec(1.0, 1.0), 2)
    with pytest.raises(KLError):
        local_coordinates(np.ones(2), b)


def test_cache_roundtrip(tmp_path):
    m = build_mesh(2, 2)
    b = global_kl(m, SPEC, 3)
    path = tmp_path / "kl.npz"
    save_kl(path, b, 2, 2, SPEC)
    c = load_kl(path, 2, 2, SPEC, 3)
    assert np.array_equal(b.modes, c.modes) and np.array_equal(b.lambdas, c.lambdas)
    assert load_kl(path, 2, 2, CovarianceSpec(0.5, 0.1), 3) is None
    assert load_kl(tmp_path / "missing.npz", 2, 2, SPEC, 3) is None


def test_iterative_kl_is_reproducible():
    m = build_mesh(4, 4)
    a = discrete_kl(m.centroids, m.areas, SPEC, 4, "iterative")
    b = discrete_kl(m.centroids, m.areas, SPEC, 4, "iterative")
    assert np.array_equal(a.lambdas, b.lambdas) and np.array_equal(a.modes, b.modes)
