import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochbddc.bddc import SchurOperator, Substructure, build_preconditioner, reduce_rhs, rho_scaling
from stochbddc.krylov import (OperatorIndefiniteError, PreconditionerIndefiniteError, lanczos_extremes,
                              pcg)
from oracles import dense_bddc_inverse


def test_zero_rhs():
    rep = pcg(np.eye(3), None, np.zeros(3))
    assert rep.iterations == 0 and rep.converged and rep.residuals == [0.0]
    assert np.all(rep.solution == 0)


def test_diagonal_spectrum():
    A = np.diag(np.arange(1.0, 6.0))
    rep = pcg(A, None, np.ones(5), tol=1e-12)
    assert rep.iterations <= 5 and rep.converged
    assert abs(rep.cond - 5.0) <= 1e-8
    np.testing.assert_allclose(rep.solution, 1 / np.arange(1.0, 6.0), rtol=1e-10)


def test_identity_preconditioned_by_inverse():
    rng = np.random.default_rng(0)
    Q = np.linalg.qr(rng.standard_normal((8, 8)))[0]
    A = Q @ np.diag(np.linspace(1, 50, 8)) @ Q.T
    rep = pcg(A, np.linalg.inv(A), rng.standard_normal(8))
    assert rep.iterations == 1 and abs(rep.cond - 1) < 1e-10


def test_indefinite_operator_raises():
    with pytest.raises(OperatorIndefiniteError) as exc:
        pcg(np.diag([1.0, -1.0]), None, np.array([0.0, 1.0]))
    assert exc.value.iteration == 0


def test_indefinite_preconditioner_raises():
    with pytest.raises(PreconditionerIndefiniteError):
        pcg(np.eye(2), -np.eye(2), np.ones(2))


def test_maxit_reports_not_converged():
    A = np.diag(np.linspace(1, 1e4, 50))
    rep = pcg(A, None, np.ones(50), maxit=3)
    assert rep.iterations == 3 and not rep.converged and len(rep.residuals) == 4


def test_nonzero_initial_guess():
    A = np.diag([2.0, 3.0])
    rep = pcg(A, None, np.array([2.0, 3.0]), x0=np.array([1.0, 1.0]))
    assert rep.residuals == [0.0] and np.allclose(rep.solution, 1)


@given(st.integers(0, 1000), st.integers(3, 30))
@settings(max_examples=25, deadline=None)
def test_energy_error_monotone(seed, n):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, n))
    A = B @ B.T + n * np.eye(n)
    D = np.diag(1 / np.diag(A))
    b = rng.standard_normal(n)
    xs = np.linalg.solve(A, b)
    errs = []
    for k in range(1, n + 1):
        rep = pcg(A, D, b, tol=0.0, maxit=k)
        e = rep.solution - xs
        errs.append(e @ A @ e)
    assert all(errs[i + 1] <= errs[i] * (1 + 1e-10) + 1e-24 for i in range(len(errs) - 1))


def test_lanczos_single_step():
    lo, hi = lanczos_extremes([0.5], [])
    assert lo == hi == 2.0
    assert np.isnan(lanczos_extremes([], [])[0])


def test_lanczos_estimate_matches_dense_bddc_cond():
    P = Substructure(2, 4)
    kappa = np.exp(0.5 * np.random.default_rng(2).standard_normal(P.mesh.n_cells))
    blocks = P.blocks(kappa)
    w = rho_scaling(P.partition, kappa)
    M = build_preconditioner(blocks, P.partition, w)
    S = SchurOperator.exact(blocks, P.partition)
    rep = pcg(S, M, reduce_rhs(blocks, P.partition, P.load), tol=1e-12)
    Minv, _ = dense_bddc_inverse(P, blocks, w)
    ev = np.linalg.eigvals(Minv @ S.matrix.toarray()).real
    assert abs(rep.cond - ev.max() / ev.min()) <= 0.05 * ev.max() / ev.min()
    assert rep.lambda_min >= 1 - 1e-6
