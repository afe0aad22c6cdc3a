"""Offline construction of PC surrogates for the subdomain BDDC components.

Two constructions are provided for every subdomain:

SG  Galerkin projection.  The matrix A_rr(xi) is expanded over the degree-2d
    set and the block system A_rrs = sum_a T_a (x) A_rr,a is solved once per
    right-hand side, giving PC expansions of A_rr^-1, X = A_rr^-1 A_cr^T and
    S_Pi = A_cc - A_cr X over the degree-d set.
SC  Collocation.  Realizations on a tensor Gauss-Hermite grid are reduced to
    a Cholesky factor R_rr and a symmetric square root H_Pi of S_Pi, whose PC
    coefficients come from weighted quadrature sums.

Subdomains of one structured mesh differ only by translation, and the
covariance is stationary, so all subdomains touching the same set of
boundary sides share local KL bases and surrogates.  Work is done once per
such class.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import SubdomainAssembler, assemble_pc_matrices, split_blocks
from .bddc import SPDError
from .chaos import (MultiIndexSet, PCMatrix, basis_values, galerkin_tensor,
                    multi_index_set, tensor_gauss_hermite)
from .random_field import CovarianceSpec, KLBasis, local_kl

OFFLINE_CACHE_VERSION = 1

# dense Cholesky of the Galerkin matrix up to this many unknowns, CG beyond
SG_DENSE_LIMIT = 9000


# ---------------------------------------------------------------- SG system

@dataclass
class SGBlockSystem:
    """Galerkin system sum_a T_a (x) A_a for one subdomain block.

    Unknowns are ordered PC index first, spatial index second, so the vector
    of block k occupies ``[k * n, (k + 1) * n)``.
    """

    index_set: MultiIndexSet     # degree-d set of the unknowns
    n: int                       # spatial block size
    matrix: sp.csr_matrix
    factor: tuple | None = field(default=None, repr=False)
    mean_factor: tuple | None = field(default=None, repr=False)
    subdomain: int | None = None

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def solve(self, V: np.ndarray) -> np.ndarray:
        V = np.asarray(V, dtype=float)
        if V.ndim == 1:
            return self.solve(V[:, None])[:, 0]
        if V.shape[1] == 0 or self.size == 0:
            return np.zeros_like(V)
        if self.factor is not None:
            return sla.cho_solve(self.factor, V)
        return self._cg(V)

    def _cg(self, V):
        # block-diagonal preconditioner I (x) A_0 (T_0 is the identity)
        nx = self.index_set.size
        fac = self.mean_factor

        def prec(v):
            return sla.cho_solve(fac, v.reshape(nx, self.n).T).T.ravel()

        M = spla.LinearOperator(self.matrix.shape, matvec=prec, dtype=float)
        out = np.empty_like(V)
        for j in range(V.shape[1]):
            x, info = spla.cg(self.matrix, V[:, j], M=M, rtol=1e-13, atol=0.0, maxiter=2000)
            if info != 0:
                raise SPDError("Galerkin system: CG did not converge", self.subdomain)
            out[:, j] = x
        return out


def _galerkin_blocks(T: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """C[k, l] = sum_a T[a, k, l] coeffs[a]; returns (nk, nl, *block)."""
    na, nk, nl = T.shape
    Ts = sp.csr_matrix(T.reshape(na, nk * nl).T)
    flat = coeffs[:na].reshape(na, -1)
    return (Ts @ flat).reshape((nk, nl) + coeffs.shape[1:])


def _sparse_galerkin(T, A_coeffs):
    """sum_a T_a (x) A_a as a sparse matrix, using the shared sparsity of the A_a."""
    na, nd, _ = T.shape
    n = A_coeffs.shape[-1]
    pattern = np.abs(A_coeffs[:na]).sum(axis=0) > 0
    ai, aj = np.nonzero(pattern)
    tpat = np.abs(T).sum(axis=0) > 0
    tk, tl = np.nonzero(tpat)
    Ts = sp.csr_matrix(T[:, tk, tl].T)                  # (nnzT, na)
    vals = Ts @ A_coeffs[:na, ai, aj]                   # (nnzT, nnzA)
    rows = (tk[:, None] * n + ai[None, :]).ravel()
    cols = (tl[:, None] * n + aj[None, :]).ravel()
    M = sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(nd * n, nd * n))
    M.eliminate_zeros()
    return M


def sg_build_system(pc_A: PCMatrix, set_d: MultiIndexSet, subdomain: int | None = None,
                    dense_limit: int = SG_DENSE_LIMIT) -> SGBlockSystem:
    """Assemble and factorize A_s = sum_{a in S_2d} T_a (x) A_a."""
    m, d = set_d.dim, set_d.degree
    if pc_A.index_set.degree < 2 * d or pc_A.dim != m:
        raise ValueError(f"need an expansion of degree {2 * d} in {m} variables")
    A = pc_A.coeffs
    if A.ndim != 3 or A.shape[1] != A.shape[2]:
        raise ValueError("square coefficient blocks required")
    big = multi_index_set(m, 2 * d)
    T = galerkin_tensor(m, d)
    M = _sparse_galerkin(T, A[:big.size])
    sys = SGBlockSystem(set_d, A.shape[1], M, subdomain=subdomain)
    if sys.size == 0:
        return sys
    if sys.size <= dense_limit:
        dense = M.toarray()
        try:
            sys.factor = sla.cho_factor(0.5 * (dense + dense.T))
        except sla.LinAlgError as exc:
            raise SPDError("Galerkin block matrix is not positive definite", subdomain) from exc
    else:
        try:
            sys.mean_factor = sla.cho_factor(A[0])
        except sla.LinAlgError as exc:
            raise SPDError("mean block is not positive definite", subdomain) from exc
    return sys


def sg_solve(sys: SGBlockSystem, v: PCMatrix | np.ndarray) -> PCMatrix:
    """Galerkin solution for a right-hand side PC expansion (or a constant vector).

    The right-hand side may carry one or more columns; a constant right-hand
    side g enters as e_1 (x) g.
    """
    nx, n = sys.index_set.size, sys.n
    if isinstance(v, PCMatrix):
        coeffs = v.coeffs[:nx]
        if coeffs.shape[0] < nx:
            coeffs = np.concatenate([coeffs, np.zeros((nx - coeffs.shape[0],) + coeffs.shape[1:])])
    else:
        g = np.asarray(v, dtype=float)
        coeffs = np.zeros((nx,) + g.shape)
        coeffs[0] = g
    vector = coeffs.ndim == 2
    if vector:
        coeffs = coeffs[..., None]
    V = coeffs.reshape(nx * n, -1)
    Y = sys.solve(V).reshape(nx, n, -1)
    if vector:
        Y = Y[..., 0]
    return PCMatrix(sys.index_set, Y)


def sg_inverse(sys: SGBlockSystem, n_r: int | None = None) -> PCMatrix:
    """PC expansion of the inverse, column by column of the identity."""
    n = sys.n if n_r is None else n_r
    if n != sys.n:
        raise ValueError("size mismatch with the Galerkin system")
    inv = sg_solve(sys, np.eye(n))
    return PCMatrix(inv.index_set, inv.coeffs, symmetric=True)


def sg_X(sys: SGBlockSystem, pc_A_cr: PCMatrix) -> PCMatrix:
    """PC expansion of A^-1 A_cr^T; right-hand sides are A_cr^T truncated to S_d."""
    nx = sys.index_set.size
    rhs = np.swapaxes(pc_A_cr.coeffs[:nx], 1, 2)
    return sg_solve(sys, PCMatrix(sys.index_set, rhs))


def sg_Z_and_SPi(pc_A_cr: PCMatrix, Y: PCMatrix, pc_A_cc: PCMatrix):
    """Galerkin projections Z_l = sum_{a, k} T[a, k, l] A_cr,a Y_k and S_Pi = A_cc - Z."""
    set_d = Y.index_set
    T = galerkin_tensor(set_d.dim, set_d.degree)
    C = _galerkin_blocks(T, pc_A_cr.coeffs)             # (nk, nl, n_c, n_r)
    Z = np.einsum("klcr,krj->lcj", C, Y.coeffs)
    Z = 0.5 * (Z + np.swapaxes(Z, 1, 2))
    S = pc_A_cc.coeffs[:set_d.size] - Z
    return PCMatrix(set_d, Z, True), PCMatrix(set_d, S, True)


def _galerkin_product(pc_left: PCMatrix, Y: PCMatrix) -> PCMatrix:
    """Projection of A(xi) Y(xi) onto S_d, A over S_2d and Y over S_d."""
    set_d = Y.index_set
    T = galerkin_tensor(set_d.dim, set_d.degree)
    C = _galerkin_blocks(T, pc_left.coeffs)
    return PCMatrix(set_d, np.einsum("klcr,krj->lcj", C, Y.coeffs))


def sg_schur_pc(pc_A_GG: PCMatrix, pc_A_GI: PCMatrix, sys_II: SGBlockSystem):
    """Pieces of the surrogate subdomain Schur complement.

    Returns (S_Gamma, Y_I, W, inv_II) over S_d: S_Gamma = A_GG - (A_GI A_II^-1 A_GI^T),
    Y_I = A_II^-1 A_GI^T, W = A_GI A_II^-1 and inv_II = A_II^-1; the last two
    act on interior loads.
    """
    set_d = sys_II.index_set
    Y_I = sg_X(sys_II, pc_A_GI)
    Z, S = sg_Z_and_SPi(pc_A_GI, Y_I, pc_A_GG)
    inv = sg_inverse(sys_II)
    W = _galerkin_product(pc_A_GI, inv)
    return S, Y_I, W, inv


# ---------------------------------------------------------------- components

@dataclass
class SurrogateComponents:
    """PC surrogates of one subdomain class; every expansion lives on S_d.

    ``arrays`` maps a component name to its coefficient stack (size, ...).
    SG names: inv_rr, X, S_pi, A_cc, A_cr; SC names: R_rr, A_cr, H_pi.
    Surrogate Schur pieces: (SG) S_G, Y_I, W, inv_II, A_GG or (SC) H_G, R_II, A_GI, A_GG,
    with S_G = H_G H_G^T.
    """

    method: str
    index_set: MultiIndexSet
    basis: KLBasis
    sizes: tuple                 # (n_i, n_d, n_p)
    arrays: dict

    def pc(self, name: str) -> PCMatrix:
        return PCMatrix(self.index_set, self.arrays[name])

    def evaluate(self, name: str, xihat) -> np.ndarray:
        psi = basis_values(self.index_set, np.asarray(xihat, dtype=float))
        return np.tensordot(psi, self.arrays[name], axes=(0, 0))

    def evaluate_all(self, names, xihat) -> dict:
        psi = basis_values(self.index_set, np.asarray(xihat, dtype=float))
        return {k: np.tensordot(psi, self.arrays[k], axes=(0, 0)) for k in names}


def _view(coeffs, sizes):
    """Block accessors on a coefficient stack in the [I, Delta, Pi] layout."""
    n_i, n_d, n_p = sizes
    n_r = n_i + n_d
    return {
        "rr": coeffs[:, :n_r, :n_r], "cr": coeffs[:, n_r:, :n_r], "cc": coeffs[:, n_r:, n_r:],
        "II": coeffs[:, :n_i, :n_i], "GI": coeffs[:, n_i:, :n_i], "GG": coeffs[:, n_i:, n_i:],
    }


def sg_build(assembler: SubdomainAssembler, basis: KLBasis, set_d: MultiIndexSet, sizes,
             schur: bool = False, subdomain: int | None = None) -> SurrogateComponents:
    m, d = set_d.dim, set_d.degree
    big = multi_index_set(m, 2 * d)
    pc_full = assemble_pc_matrices(assembler, basis, big)
    v = _view(pc_full.coeffs, sizes)
    n_i, n_d, n_p = sizes
    nx = set_d.size

    sys_rr = sg_build_system(PCMatrix(big, np.ascontiguousarray(v["rr"])), set_d, subdomain)
    inv = sg_inverse(sys_rr)
    X = sg_X(sys_rr, PCMatrix(big, v["cr"]))
    _, S = sg_Z_and_SPi(PCMatrix(big, v["cr"]), X, PCMatrix(big, v["cc"]))
    arrays = {
        "inv_rr": 0.5 * (inv.coeffs + np.swapaxes(inv.coeffs, 1, 2)),
        "X": X.coeffs, "S_pi": S.coeffs,
        "A_cc": v["cc"][:nx].copy(), "A_cr": v["cr"][:nx].copy(),
    }
    if schur:
        arrays["A_GG"] = v["GG"][:nx].copy()
        if n_i:
            sys_II = sg_build_system(PCMatrix(big, np.ascontiguousarray(v["II"])), set_d, subdomain)
            S_G, Y_I, W, inv_II = sg_schur_pc(PCMatrix(big, v["GG"]), PCMatrix(big, v["GI"]),
                                              sys_II)
            arrays.update(S_G=S_G.coeffs, Y_I=Y_I.coeffs, W=W.coeffs, inv_II=inv_II.coeffs)
        else:
            arrays.update(S_G=arrays["A_GG"].copy(), Y_I=np.zeros((nx, 0, n_d + n_p)),
                          W=np.zeros((nx, n_d + n_p, 0)), inv_II=np.zeros((nx, 0, 0)))
    return SurrogateComponents("sg", set_d, basis, tuple(sizes), arrays)


def _sym_sqrt(S, subdomain=None, tol=1e-12):
    S = 0.5 * (S + S.T)
    if S.size == 0:
        return S.copy()
    lam, Q = np.linalg.eigh(S)
    if lam.min() < -tol * max(1.0, abs(lam).max()):
        raise SPDError("negative eigenvalue in a coarse realization", subdomain,
                       {"min_eig": float(lam.min())})
    return (Q * np.sqrt(np.clip(lam, 0.0, None))) @ Q.T


def _upper_cholesky(A, what, subdomain=None):
    if A.size == 0:
        return A.copy()
    try:
        R = sla.cholesky(A, lower=False)
    except sla.LinAlgError as exc:
        raise SPDError(f"{what} realization is not positive definite", subdomain) from exc
    if np.any(np.diag(R) <= 0):
        raise SPDError(f"{what} Cholesky factor has a non-positive diagonal", subdomain)
    return R


def sc_build(assembler: SubdomainAssembler, basis: KLBasis, set_d: MultiIndexSet, sizes,
             q: int | None = None, schur: bool = False,
             subdomain: int | None = None) -> SurrogateComponents:
    """Collocation surrogates from a tensor Gauss-Hermite grid, q points per dimension."""
    q = set_d.degree + 1 if q is None else int(q)
    if q < 1:
        raise ValueError("quadrature level must be at least 1")
    n_i, n_d, n_p = sizes
    n_r = n_i + n_d
    nodes, weights = tensor_gauss_hermite(q, set_d.dim)
    c = basis.modes * np.sqrt(basis.lambdas)[None, :]
    kappa = np.exp(c @ nodes.T)                         # (n_cells_i, Q)
    mats = assembler.matrices(kappa)                    # (Q, size, size)
    v = _view(mats, sizes)
    psi_w = basis_values(set_d, nodes) * weights[:, None]   # (Q, nx)

    R_rr = np.empty((len(nodes), n_r, n_r))
    H = np.empty((len(nodes), n_p, n_p))
    R_II = np.empty((len(nodes), n_i, n_i)) if schur else None
    H_G = np.empty((len(nodes), n_d + n_p, n_d + n_p)) if schur else None
    for j in range(len(nodes)):
        R = _upper_cholesky(v["rr"][j], "A_rr", subdomain)
        R_rr[j] = R
        if n_r:
            Xj = sla.cho_solve((R, False), v["cr"][j].T)
            S = v["cc"][j] - v["cr"][j] @ Xj
        else:
            S = v["cc"][j]
        H[j] = _sym_sqrt(S, subdomain)
        if schur:
            R_II[j] = R[:n_i, :n_i]     # leading block of the A_rr factor is the A_II factor
            if n_i:
                Yj = sla.cho_solve((R_II[j], False), v["GI"][j].T)
                S_G = v["GG"][j] - v["GI"][j] @ Yj
            else:
                S_G = v["GG"][j]
            # the square root keeps S_G = H H^T semidefinite and shares its kernel
            H_G[j] = _sym_sqrt(S_G, subdomain)

    def project(stack):
        return np.tensordot(psi_w.T, stack, axes=(1, 0))

    arrays = {"R_rr": project(R_rr), "A_cr": project(v["cr"]), "H_pi": project(H),
              "A_cc": project(v["cc"])}
    if schur:
        arrays.update(R_II=project(R_II), A_GI=project(v["GI"]), A_GG=project(v["GG"]),
                      H_G=project(H_G))
    return SurrogateComponents("sc", set_d, basis, tuple(sizes), arrays)


# ---------------------------------------------------------------- drivers

def subdomain_class(ns: int, i: int) -> tuple:
    """Which boundary sides (bottom, top, left, right) subdomain ``i`` touches."""
    r, c = divmod(i, ns)
    return (r == 0, r == ns - 1, c == 0, c == ns - 1)


@dataclass
class OfflineData:
    method: str
    nkl: int
    degree: int
    quad: int | None
    spec: CovarianceSpec
    ns: int
    n: int
    schur: bool
    representative: np.ndarray   # subdomain -> index into ``components``
    components: list             # one SurrogateComponents per class
    wall_seconds: float = 0.0

    def for_subdomain(self, i: int) -> SurrogateComponents:
        return self.components[int(self.representative[i])]


def build_offline(problem, spec: CovarianceSpec, method: str, nkl: int, degree: int,
                  quad: int | None = None, schur: bool = False) -> OfflineData:
    """Local KL bases and PC surrogates for every subdomain class."""
    import time
    if method not in ("sg", "sc"):
        raise ValueError(f"unknown construction {method!r}")
    t0 = time.perf_counter()
    mesh, part = problem.mesh, problem.partition
    set_d = multi_index_set(nkl, degree)
    classes = {}
    rep = np.empty(mesh.n_subdomains, dtype=np.int64)
    comps = []
    for i in range(mesh.n_subdomains):
        key = subdomain_class(mesh.ns, i)
        if key not in classes:
            basis = local_kl(mesh, spec, nkl, i)
            sizes = (int(part.n_interior[i]), int(part.n_dual[i]), int(part.n_primal[i]))
            asm = problem.assemblers[i]
            if method == "sg":
                comp = sg_build(asm, basis, set_d, sizes, schur=schur, subdomain=i)
            else:
                comp = sc_build(asm, basis, set_d, sizes, q=quad, schur=schur, subdomain=i)
            classes[key] = len(comps)
            comps.append(comp)
        rep[i] = classes[key]
    return OfflineData(method, nkl, degree, quad, spec, mesh.ns, mesh.n, schur, rep, comps,
                       time.perf_counter() - t0)


def _offline_key(ns, n, spec, nkl, degree, method, quad, schur) -> str:
    payload = json.dumps({"ns": ns, "n": n, "sigma2": spec.sigma2, "ell": spec.ell, "nkl": nkl,
                          "d": degree, "method": method, "q": quad, "schur": schur},
                         sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def save_offline(path, data: OfflineData) -> None:
    arrays = {
        "version": np.array(OFFLINE_CACHE_VERSION),
        "key": np.array(_offline_key(data.ns, data.n, data.spec, data.nkl, data.degree,
                                     data.method, data.quad, data.schur)),
        "representative": data.representative,
    }
    for j, comp in enumerate(data.components):
        arrays[f"{j}/sizes"] = np.array(comp.sizes)
        arrays[f"{j}/lambdas"] = comp.basis.lambdas
        arrays[f"{j}/modes"] = comp.basis.modes
        arrays[f"{j}/weights"] = comp.basis.weights
        arrays[f"{j}/total_variance"] = np.array(comp.basis.total_variance)
        for name, a in comp.arrays.items():
            arrays[f"{j}/arr/{name}"] = a
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_offline(path, ns, n, spec, nkl, degree, method, quad=None,
                 schur=False) -> OfflineData | None:
    """Cached offline data, or None when missing or built for other parameters."""
    path = Path(path)
    if not path.exists():
        return None
    with np.load(path) as z:
        if int(z["version"]) != OFFLINE_CACHE_VERSION:
            return None
        if str(z["key"]) != _offline_key(ns, n, spec, nkl, degree, method, quad, schur):
            return None
        rep = z["representative"]
        set_d = multi_index_set(nkl, degree)
        comps = []
        for j in range(int(rep.max()) + 1):
            basis = KLBasis(z[f"{j}/lambdas"], z[f"{j}/modes"], z[f"{j}/weights"],
                            float(z[f"{j}/total_variance"]))
            prefix = f"{j}/arr/"
            arrs = {k[len(prefix):]: z[k] for k in z.files if k.startswith(prefix)}
            comps.append(SurrogateComponents(method, set_d, basis,
                                             tuple(int(s) for s in z[f"{j}/sizes"]), arrs))
    return OfflineData(method, nkl, degree, quad, spec, ns, n, schur, rep, comps)
