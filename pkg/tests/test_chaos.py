import itertools
from math import comb, factorial

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochbddc.chaos import (PCMatrix, basis_values, galerkin_tensor, gauss_hermite,
                             hermite_eval, lognormal_pc_coeff, lognormal_pc_coeffs,
                             multi_index_set, pc_evaluate, tensor_gauss_hermite,
                             triple_product, univariate_triple)
from oracles import hermite_quadrature


@pytest.mark.parametrize("m,d,size", [(3, 4, 35), (1, 0, 1), (2, 2, 6), (4, 6, 210)])
def test_multi_index_sizes(m, d, size):
    s = multi_index_set(m, d)
    assert s.size == size == comb(m + d, d)
    assert np.all(s.indices[0] == 0)


@given(st.integers(1, 4), st.integers(0, 6))
@settings(max_examples=30, deadline=None)
def test_multi_index_ordering(m, d):
    s = multi_index_set(m, d)
    grades = s.indices.sum(axis=1)
    assert np.all(np.diff(grades) >= 0)
    assert len({tuple(a) for a in s.indices}) == s.size
    # lower degrees are prefixes; first-order terms in variable order
    for k in range(d + 1):
        assert np.array_equal(multi_index_set(m, k).indices, s.indices[:s.prefix_size(k)])
    if d >= 1:
        assert np.array_equal(s.indices[1:m + 1], np.eye(m, dtype=int))
    for pos, a in enumerate(s.indices):
        assert s.position(a) == pos


def test_invalid_multi_index():
    with pytest.raises(ValueError):
        multi_index_set(0, 2)


def test_hermite_values():
    assert hermite_eval(0, 3.7) == 1.0
    assert abs(hermite_eval(2, 1.0)) < 1e-15
    x, w = hermite_quadrature(20)
    assert abs(np.sum(w * hermite_eval(3, x) ** 2) - 1) < 1e-12


def test_gram_matrix_quadrature_exact():
    s = multi_index_set(2, 4)
    nodes, w = tensor_gauss_hermite(5, 2)
    P = basis_values(s, nodes)
    np.testing.assert_allclose(P.T @ (w[:, None] * P), np.eye(s.size), atol=1e-10)


def test_gram_matrix_monte_carlo():
    # degree 1: the entry variances are at most 2, so 5e-3 is 3.5 standard errors
    s = multi_index_set(2, 1)
    xi = np.random.default_rng(0).standard_normal((1_000_000, 2))
    P = basis_values(s, xi)
    G = P.T @ P / len(xi)
    assert np.abs(G - np.eye(s.size)).max() < 5e-3


def test_triple_product_values():
    assert triple_product([0, 0], [0, 0], [0, 0]) == 1.0
    assert abs(univariate_triple(1, 1, 2) - np.sqrt(2)) < 1e-14
    assert univariate_triple(1, 1, 1) == 0.0
    x, w = hermite_quadrature(30)
    q = np.sum(w * x * x * (x * x - 1) / np.sqrt(2))
    assert abs(q - np.sqrt(2)) < 1e-12


@given(st.lists(st.integers(0, 6), min_size=6, max_size=6))
@settings(max_examples=40, deadline=None)
def test_triple_product_symmetry(v):
    a, b, c = v[:2], v[2:4], v[4:]
    ref = triple_product(a, b, c)
    for perm in itertools.permutations([a, b, c]):
        assert triple_product(*perm) == ref


def test_triple_product_against_quadrature_up_to_12():
    x, w = hermite_quadrature(40)
    H = np.array([hermite_eval(k, x) for k in range(13)])
    for i, j, k in itertools.product(range(13), repeat=3):
        ref = np.sum(w * H[i] * H[j] * H[k])
        assert abs(univariate_triple(i, j, k) - ref) < 1e-10 * max(1, abs(ref))


def test_lognormal_coefficients():
    assert lognormal_pc_coeff(0.0, 0) == 1.0
    assert lognormal_pc_coeff(0.0, 3) == 0.0
    assert abs(lognormal_pc_coeff(1.0, 1) - 1.6487212707) < 1e-10
    with pytest.raises(ValueError):
        lognormal_pc_coeff(1.0, -1)


def test_lognormal_against_quadrature():
    x, w = hermite_quadrature(50)
    for c in np.linspace(-2, 2, 17):
        for k in range(13):
            ref = np.sum(w * np.exp(c * x) * hermite_eval(k, x))
            assert abs(lognormal_pc_coeff(c, k) - ref) < 1e-10


@given(st.floats(-2, 2))
@settings(max_examples=25, deadline=None)
def test_lognormal_parseval(c):
    parts = np.cumsum([lognormal_pc_coeff(c, k) ** 2 for k in range(40)])
    assert np.all(np.diff(parts) >= 0)
    assert abs(parts[-1] - np.exp(2 * c * c)) < 1e-8 * np.exp(2 * c * c)


def test_lognormal_multivariate_factorizes():
    s = multi_index_set(2, 3)
    c = np.array([[0.3, -0.7]])
    out = lognormal_pc_coeffs(c, s)[0]
    for pos, a in enumerate(s.indices):
        ref = lognormal_pc_coeff(0.3, a[0]) * lognormal_pc_coeff(-0.7, a[1])
        assert abs(out[pos] - ref) < 1e-14


def test_galerkin_tensor_entries():
    T = galerkin_tensor(2, 2)
    big, small = multi_index_set(2, 4), multi_index_set(2, 2)
    assert T.shape == (big.size, small.size, small.size)
    np.testing.assert_allclose(T[0], np.eye(small.size), atol=1e-15)
    for a, k, l in [(3, 1, 2), (5, 2, 2), (7, 4, 1)]:
        assert T[a, k, l] == triple_product(big.indices[a], small.indices[k], small.indices[l])


def test_gauss_hermite_normalized():
    x, w = gauss_hermite(6)
    assert abs(w.sum() - 1) < 1e-14 and abs(np.sum(w * x * x) - 1) < 1e-13
    with pytest.raises(ValueError):
        gauss_hermite(0)


def test_pc_evaluate():
    s0 = multi_index_set(2, 0)
    A0 = np.arange(4.0).reshape(2, 2)
    assert np.array_equal(pc_evaluate(PCMatrix(s0, A0[None]), np.array([0.3, 1.0])), A0)
    s = multi_index_set(2, 3)
    rng = np.random.default_rng(1)
    mean_only = np.zeros((s.size, 2, 2))
    mean_only[0] = A0
    np.testing.assert_allclose(pc_evaluate(PCMatrix(s, mean_only), rng.standard_normal(2)), A0)
    p = PCMatrix(s, rng.standard_normal((s.size, 3, 3)))
    q = PCMatrix(s, rng.standard_normal((s.size, 3, 3)))
    xi = rng.standard_normal(2)
    np.testing.assert_allclose(pc_evaluate(p + q, xi), pc_evaluate(p, xi) + pc_evaluate(q, xi),
                               atol=1e-12)
    with pytest.raises(ValueError):
        pc_evaluate(p, np.zeros(3))
    np.testing.assert_allclose(p.truncate(1).coeffs, p.coeffs[:3])


def test_basis_values_shape_and_factorials():
    s = multi_index_set(1, 4)
    v = basis_values(s, np.array([[2.0]]))[0]
    x = 2.0
    ref = [1, x, (x * x - 1) / np.sqrt(2), (x ** 3 - 3 * x) / np.sqrt(6),
           (x ** 4 - 6 * x * x + 3) / np.sqrt(factorial(4))]
    np.testing.assert_allclose(v, ref, rtol=1e-14)
