"""Preconditioned conjugate gradients with a Lanczos spectrum estimate."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla


class BreakdownError(ArithmeticError):
    """PCG met a non-positive curvature or preconditioned inner product."""

    def __init__(self, message, iteration, value):
        super().__init__(f"{message} at iteration {iteration} (value {value:.3e})")
        self.iteration = iteration
        self.value = value


class OperatorIndefiniteError(BreakdownError):
    pass


class PreconditionerIndefiniteError(BreakdownError):
    pass


@dataclass
class PcgReport:
    iterations: int
    converged: bool
    residuals: list = field(default_factory=list)   # relative residual, index 0 = initial
    lambda_min: float = np.nan
    lambda_max: float = np.nan
    solution: np.ndarray | None = None

    @property
    def cond(self) -> float:
        if not self.lambda_min > 0:
            return np.nan
        return self.lambda_max / self.lambda_min


def _as_action(op):
    if callable(op):
        return op
    if op is None:
        return lambda v: v.copy()
    return lambda v: op @ v


def lanczos_extremes(alphas, betas):
    """Extreme eigenvalues of the Lanczos matrix built from CG coefficients.

    With step lengths alpha_k and direction updates beta_k,
    T[k, k] = 1/alpha_k + beta_{k-1}/alpha_{k-1} and
    T[k, k+1] = sqrt(beta_k)/alpha_k.
    """
    a = np.asarray(alphas, dtype=float)
    b = np.asarray(betas, dtype=float)
    k = len(a)
    if k == 0:
        return np.nan, np.nan
    diag = 1.0 / a
    diag[1:] += b[:k - 1] / a[:k - 1]
    off = np.sqrt(b[:k - 1]) / a[:k - 1]
    ev = sla.eigvalsh_tridiagonal(diag, off)
    return float(ev[0]), float(ev[-1])


def pcg(operator, preconditioner, rhs, tol: float = 1e-8, maxit: int = 100,
        x0=None) -> PcgReport:
    """Solve A x = b; stop when |b - A x| <= tol |b - A x0|."""
    A = _as_action(operator)
    M = _as_action(preconditioner)
    b = np.asarray(rhs, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - A(x) if x0 is not None else b.copy()
    r0 = np.linalg.norm(r)
    report = PcgReport(0, True, [1.0], solution=x)
    if r0 == 0.0:
        report.residuals = [0.0]
        return report

    z = M(r)
    rz = float(r @ z)
    if rz <= 0:
        raise PreconditionerIndefiniteError("non-positive <r, M r>", 0, rz)
    p = z.copy()
    alphas, betas = [], []
    converged = False
    it = 0
    while it < maxit:
        Ap = A(p)
        pAp = float(p @ Ap)
        if pAp <= 0:
            raise OperatorIndefiniteError("non-positive curvature p^T A p", it, pAp)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        it += 1
        alphas.append(alpha)
        rel = np.linalg.norm(r) / r0
        report.residuals.append(float(rel))
        if rel <= tol:
            converged = True
            break
        z = M(r)
        rz_new = float(r @ z)
        if rz_new <= 0:
            raise PreconditionerIndefiniteError("non-positive <r, M r>", it, rz_new)
        beta = rz_new / rz
        betas.append(beta)
        p = z + beta * p
        rz = rz_new

    report.iterations = it
    report.converged = converged
    report.lambda_min, report.lambda_max = lanczos_extremes(alphas, betas)
    report.solution = x
    return report
