import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from stochbddc.assembly import (CoefficientError, SubdomainAssembler, assemble_pc_matrices,
                                assemble_stiffness, split_blocks)
from stochbddc.chaos import multi_index_set, pc_evaluate
from stochbddc.mesh_fem import build_mesh, classify_dofs
from stochbddc.random_field import CovarianceSpec, KLBasis, local_kl
from oracles import dense_stiffness


def test_constant_null_space_and_symmetry():
    m = build_mesh(2, 3)
    kappa = np.random.default_rng(0).uniform(0.5, 2, m.n_cells)
    A = assemble_stiffness(m, kappa, free_only=False)
    assert abs(A @ np.ones(m.n_nodes)).max() < 1e-13
    assert abs(A - A.T).max() == 0.0


def test_quadrature_oracle_unit_coefficient():
    m = build_mesh(1, 2)
    A = assemble_stiffness(m, np.ones(m.n_cells), free_only=False).toarray()
    assert np.abs(A - dense_stiffness(m, np.ones(m.n_cells))).max() < 1e-13


def test_nonpositive_coefficient_rejected():
    m = build_mesh(1, 2)
    k = np.ones(m.n_cells)
    k[3] = 0.0
    with pytest.raises(CoefficientError):
        assemble_stiffness(m, k)


def test_subdomain_sum_reproduces_global():
    m = build_mesh(3, 3)
    p = classify_dofs(m)
    kappa = np.random.default_rng(1).uniform(0.5, 2, m.n_cells)
    A = assemble_stiffness(m, kappa).toarray()
    B = np.zeros_like(A)
    for i in range(m.n_subdomains):
        Ai = SubdomainAssembler(m, p, i).matrix(kappa)
        d = p.local_dofs[i]
        B[np.ix_(d, d)] += Ai
    assert np.abs(A - B).max() < 1e-13
    assert np.allclose(assemble_stiffness(m, kappa, p, subdomain=4).toarray(),
                       SubdomainAssembler(m, p, 4).matrix(kappa))


def test_split_blocks_small():
    m = build_mesh(2, 2)
    p = classify_dofs(m)
    kappa = np.ones(m.n_cells)
    for i in range(4):
        Ai = SubdomainAssembler(m, p, i).matrix(kappa)
        b = split_blocks(Ai, p, i)
        assert b.A_rr.shape == (3, 3) and b.A_cr.shape == (1, 3) and b.A_cc.shape == (1, 1)
        assert np.array_equal(b.recombine(), Ai)
        assert np.array_equal(split_blocks(sp.csr_matrix(Ai), p, i).matrix, Ai)


def test_A_rr_positive_definite_for_random_fields():
    m = build_mesh(2, 3)
    p = classify_dofs(m)
    rng = np.random.default_rng(2)
    asm = SubdomainAssembler(m, p, 0)
    for _ in range(100):
        kappa = np.exp(rng.standard_normal(m.n_cells))
        sla.cholesky(split_blocks(asm.matrix(kappa), p, 0).A_rr)


def test_pc_matrices_mean_coefficient():
    m = build_mesh(2, 3)
    p = classify_dofs(m)
    asm = SubdomainAssembler(m, p, 1)
    basis = local_kl(m, CovarianceSpec(0.5, 1.0), 2, 1)
    pc = assemble_pc_matrices(asm, basis, multi_index_set(2, 3))
    kbar = np.exp(0.5 * (basis.modes ** 2 * basis.lambdas).sum(axis=1))
    full = np.ones(m.n_cells)
    full[asm.cells] = kbar
    np.testing.assert_allclose(pc.coeffs[0], asm.matrix(full), atol=1e-13)
    for c in pc.coeffs:
        assert np.abs(c - c.T).max() < 1e-14


def test_pc_matrices_deterministic_basis():
    m = build_mesh(2, 3)
    p = classify_dofs(m)
    asm = SubdomainAssembler(m, p, 0)
    n = len(asm.cells)
    basis = KLBasis(np.zeros(1), np.ones((n, 1)), np.full(n, 1.0 / n), 1.0)
    pc = assemble_pc_matrices(asm, basis, multi_index_set(1, 4))
    assert np.all(pc.coeffs[1:] == 0)
    np.testing.assert_allclose(pc.coeffs[0], asm.matrix(np.ones(m.n_cells)))


def test_pc_matrices_converge_in_degree():
    # truncated PC series are not pointwise monotone in d, so the check is on
    # the mean Frobenius error over 20 fixed samples and on the exact
    # mean-square error computed by quadrature
    m = build_mesh(2, 3)
    p = classify_dofs(m)
    asm = SubdomainAssembler(m, p, 3)
    basis = local_kl(m, CovarianceSpec(0.5, 1.0), 2, 3)
    pc = assemble_pc_matrices(asm, basis, multi_index_set(2, 4))

    def exact(xi):
        kappa = np.ones(m.n_cells)
        kappa[asm.cells] = np.exp(basis.modes @ (np.sqrt(basis.lambdas) * xi))
        return asm.matrix(kappa)

    rng = np.random.default_rng(3)
    samples = rng.standard_normal((20, 2))
    mean_err = [np.mean([np.linalg.norm(pc_evaluate(pc.truncate(d), xi) - exact(xi))
                         for xi in samples]) for d in (1, 2, 3, 4)]
    assert all(a > b for a, b in zip(mean_err, mean_err[1:]))

    from stochbddc.chaos import tensor_gauss_hermite
    nodes, w = tensor_gauss_hermite(12, 2)
    ms = [sum(wq * np.linalg.norm(pc_evaluate(pc.truncate(d), xi) - exact(xi)) ** 2
              for xi, wq in zip(nodes, w)) for d in (1, 2, 3, 4)]
    assert all(a > b for a, b in zip(ms, ms[1:]))


def test_pc_matrices_dimension_check():
    m = build_mesh(2, 2)
    p = classify_dofs(m)
    asm = SubdomainAssembler(m, p, 0)
    basis = local_kl(m, CovarianceSpec(0.5, 1.0), 2, 0)
    with pytest.raises(ValueError):
        assemble_pc_matrices(asm, basis, multi_index_set(3, 2))
