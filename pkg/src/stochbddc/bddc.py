"""Deterministic BDDC on the structured substructuring.

Primal constraints are the interior subdomain cross points and the
interface weights come from rho-scaling.  The preconditioner is assembled
from three per-subdomain ingredients,

* the Delta-Delta block of A_rr^-1 (dual correction),
* the Delta rows of A_rr^-1 A_cr^T (coarse basis Phi),
* the local coarse contribution S_Pi^(i) = A_cc - A_cr A_rr^-1 A_cr^T,

so exact factorizations and PC surrogates plug into the same apply.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .assembly import SubdomainAssembler, SubdomainBlocks, split_blocks
from .mesh_fem import DofPartition, Mesh, build_mesh, classify_dofs, load_vector


class SPDError(np.linalg.LinAlgError):
    """A matrix that must be symmetric positive definite is not."""

    def __init__(self, message, subdomain=None, diagnostics=None):
        super().__init__(message)
        self.subdomain = subdomain
        self.diagnostics = diagnostics or {}


def _cho(A, what, subdomain=None):
    try:
        return sla.cho_factor(A, lower=False, check_finite=True)
    except (sla.LinAlgError, ValueError) as exc:
        raise SPDError(f"{what} is not positive definite", subdomain) from exc


class Substructure:
    """Mesh, dof partition, per-subdomain assemblers and load vector."""

    def __init__(self, ns: int, n: int):
        self.mesh: Mesh = build_mesh(ns, n)
        self.partition: DofPartition = classify_dofs(self.mesh)
        self.assemblers = [SubdomainAssembler(self.mesh, self.partition, i)
                           for i in range(self.mesh.n_subdomains)]
        self.load = load_vector(self.mesh)

    @property
    def n_subdomains(self) -> int:
        return self.mesh.n_subdomains

    def blocks(self, kappa) -> list:
        return [split_blocks(a.matrix(kappa), self.partition, i)
                for i, a in enumerate(self.assemblers)]


# ------------------------------------------------------------------ Schur

@dataclass
class SchurOperator:
    """Interface operator assembled from dense subdomain Schur complements.

    Each subdomain contributes S^(i) = A_GG - A_GI A_II^-1 A_GI^T in its local
    ``[Delta, Pi]`` interface ordering.  The contributions are scattered into
    one sparse matrix so a product costs a single sparse mat-vec.
    """

    partition: DofPartition
    local: list
    mode: str = "exact"
    matrix: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        rows, cols, vals = [], [], []
        for idx, S in zip(self.partition.local_gamma, self.local):
            rows.append(np.repeat(idx, len(idx)))
            cols.append(np.tile(idx, len(idx)))
            vals.append(np.asarray(S).ravel())
        n = self.partition.n_gamma
        if rows:
            self.matrix = sp.csr_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
        else:
            self.matrix = sp.csr_matrix((n, n))

    @classmethod
    def exact(cls, blocks: list, partition: DofPartition) -> "SchurOperator":
        return cls(partition, [local_schur(b) for b in blocks], "exact")

    def apply(self, u):
        return self.matrix @ u

    __call__ = apply


def local_schur(b: SubdomainBlocks) -> np.ndarray:
    if b.n_i == 0:
        return b.A_GG.copy()
    fac = sla.cho_factor(b.A_II)
    S = b.A_GG - b.A_GI @ sla.cho_solve(fac, b.A_GI.T)
    return 0.5 * (S + S.T)


def schur_apply(op: SchurOperator, u):
    return op.apply(u)


def reduce_rhs(blocks: list, partition: DofPartition, f) -> np.ndarray:
    """g = f_Gamma - A_GI A_II^-1 f_I, accumulated subdomain by subdomain."""
    f = np.asarray(f, dtype=float)
    g = f[partition.gamma].copy()
    for i, b in enumerate(blocks):
        fi = f[partition.interior[i]]
        if b.n_i == 0 or not fi.any():
            continue
        try:
            y = sla.cho_solve(sla.cho_factor(b.A_II), fi)
        except sla.LinAlgError as exc:
            raise SPDError("A_II is singular", i) from exc
        np.add.at(g, partition.local_gamma[i], -(b.A_GI @ y))
    return g


def recover_interior(blocks: list, partition: DofPartition, f, u_gamma) -> np.ndarray:
    """Full free-dof solution from interface values by local interior solves."""
    f = np.asarray(f, dtype=float)
    u = np.zeros(partition.n_free)
    u[partition.gamma] = u_gamma
    for i, b in enumerate(blocks):
        if b.n_i == 0:
            continue
        rhs = f[partition.interior[i]] - b.A_GI.T @ u_gamma[partition.local_gamma[i]]
        u[partition.interior[i]] = sla.cho_solve(sla.cho_factor(b.A_II), rhs)
    return u


# ------------------------------------------------------------------ scaling

def rho_scaling(partition: DofPartition, kappa) -> np.ndarray:
    """Weights on the partially assembled space.

    Primal entries get 1; the copy of a dual dof owned by subdomain i gets
    kbar_i / sum_j kbar_j, kbar_i being the mean coefficient over the cells of
    subdomain i touching that node.
    """
    kappa = np.asarray(kappa, dtype=float)
    kbar = partition.node_cell_average @ kappa
    gamma_of_copy = partition.tilde_to_gamma[partition.n_pi:]
    total = np.bincount(gamma_of_copy, weights=kbar, minlength=partition.n_gamma)
    w = np.ones(partition.n_tilde)
    w[partition.n_pi:] = kbar / total[gamma_of_copy]
    return w


def average_operator_apply(partition: DofPartition, weights, w) -> np.ndarray:
    """E_D w = R~ R~_D^T w: weighted average across the interface, redistributed."""
    return partition.to_tilde(partition.from_tilde(weights * w))


# ------------------------------------------------------------ preconditioner

@dataclass
class BddcPreconditioner:
    partition: DofPartition
    weights: np.ndarray
    dual_op: sp.csr_matrix       # block diagonal over subdomains, Delta-copy space
    phi_delta: sp.csr_matrix     # Delta-copy rows of Phi (its Pi rows are the identity)
    coarse: np.ndarray           # assembled S_Pi
    local_coarse: list
    coarse_factor: tuple = field(repr=False, default=None)

    def apply(self, r):
        p = self.partition
        w = self.weights * p.to_tilde(r)
        wp, wd = w[:p.n_pi], w[p.n_pi:]
        yd = self.dual_op @ wd
        v = wp + self.phi_delta.T @ wd
        s = sla.cho_solve(self.coarse_factor, v) if p.n_pi else v
        yd = yd + self.phi_delta @ s
        y = np.concatenate([s, yd])
        return p.from_tilde(self.weights * y)

    __call__ = apply

    def phi(self) -> np.ndarray:
        """Dense coarse basis on the partially assembled space."""
        return np.vstack([np.eye(self.partition.n_pi), self.phi_delta.toarray()])


def preconditioner_apply(M: BddcPreconditioner, r):
    return M.apply(r)


def assemble_preconditioner(partition: DofPartition, weights, inv_dd: list,
                            x_delta: list, s_pi_local: list) -> BddcPreconditioner:
    """Glue per-subdomain pieces into the BDDC preconditioner.

    ``inv_dd[i]``   Delta-Delta block of A_rr^-1 (n_d x n_d)
    ``x_delta[i]``  Delta rows of A_rr^-1 A_cr^T (n_d x n_p)
    ``s_pi_local[i]`` local coarse contribution (n_p x n_p)
    """
    p = partition
    dual_op = sp.block_diag([sp.csr_matrix(0.5 * (G + G.T)) for G in inv_dd] or [sp.csr_matrix((0, 0))],
                            format="csr")
    rows, cols, vals = [], [], []
    for i, X in enumerate(x_delta):
        X = np.asarray(X)
        if X.size == 0:
            continue
        r = np.arange(p.dual_slice(i).start, p.dual_slice(i).stop)
        rows.append(np.repeat(r, X.shape[1]))
        cols.append(np.tile(p.local_primal[i], X.shape[0]))
        vals.append(-X.ravel())
    shape = (p.n_dual_copies, p.n_pi)
    if rows:
        phi_delta = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                  shape=shape)
    else:
        phi_delta = sp.csr_matrix(shape)

    coarse = np.zeros((p.n_pi, p.n_pi))
    for i, S in enumerate(s_pi_local):
        idx = p.local_primal[i]
        coarse[np.ix_(idx, idx)] += 0.5 * (S + S.T)
    factor = None
    if p.n_pi:
        try:
            factor = sla.cho_factor(coarse)
        except sla.LinAlgError as exc:
            local_min = [float(np.linalg.eigvalsh(0.5 * (S + S.T)).min()) if np.size(S) else np.inf
                         for S in s_pi_local]
            diag = {"coarse_min_eig": float(np.linalg.eigvalsh(coarse).min()),
                    "local_min_eig": local_min}
            worst = int(np.argmin(local_min))
            raise SPDError("coarse matrix S_Pi is not positive definite", worst, diag) from exc
    return BddcPreconditioner(p, np.asarray(weights, dtype=float), dual_op, phi_delta,
                              coarse, list(s_pi_local), factor)


def exact_components(b: SubdomainBlocks, subdomain=None):
    """(inv_dd, x_delta, s_pi) of one subdomain from a Cholesky factor of A_rr."""
    n_i, n_d, n_c = b.n_i, b.n_d, b.n_c
    if b.n_r == 0:
        return np.zeros((0, 0)), np.zeros((0, n_c)), b.A_cc.copy()
    fac = _cho(b.A_rr, "A_rr", subdomain)
    X = sla.cho_solve(fac, b.A_cr.T)
    E = np.zeros((b.n_r, n_d))
    E[n_i:, :] = np.eye(n_d)
    inv_dd = sla.cho_solve(fac, E)[n_i:, :]
    s_pi = b.A_cc - b.A_cr @ X
    return inv_dd, X[n_i:, :], 0.5 * (s_pi + s_pi.T)


def build_preconditioner(blocks: list, partition: DofPartition, weights) -> BddcPreconditioner:
    parts = [exact_components(b, i) for i, b in enumerate(blocks)]
    return assemble_preconditioner(partition, weights, *map(list, zip(*parts))) if parts else \
        assemble_preconditioner(partition, weights, [], [], [])


def mean_preconditioner(problem: Substructure, spec) -> BddcPreconditioner:
    """BDDC for the constant coefficient exp(sigma^2 / 2); independent of the sample."""
    kappa = np.full(problem.mesh.n_cells, np.exp(0.5 * spec.sigma2))
    blocks = problem.blocks(kappa)
    return build_preconditioner(blocks, problem.partition, rho_scaling(problem.partition, kappa))
