"""Online stage: per-sample evaluation of the PC surrogates.

For each sample the local KL coordinates of every subdomain are computed
from the sampled global field, the surrogates are evaluated there and glued
into a BDDC preconditioner.  The only factorization performed is that of
the assembled coarse matrix; SC factors are applied by triangular solves.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .bddc import (BddcPreconditioner, SchurOperator, SPDError, assemble_preconditioner,
                   rho_scaling)
from .offline import OfflineData
from .random_field import KLBasis, SampleVector, evaluate_field, local_coordinates


@dataclass
class OnlineInstance:
    seed: int
    method: str
    xihat: list                                  # per subdomain local coordinates
    weights: np.ndarray
    preconditioner: BddcPreconditioner | None
    spd_ok: bool
    parts: dict = field(repr=False, default_factory=dict)
    factorizations: list = field(default_factory=list)   # (what, size) of every factorization
    failure: SPDError | None = None


def subdomain_coordinates(offline: OfflineData, mesh, field_values) -> list:
    out = []
    for i in range(mesh.n_subdomains):
        comp = offline.for_subdomain(i)
        out.append(local_coordinates(field_values[mesh.subdomain_cells(i)], comp.basis))
    return out


def _sg_parts(comp, xihat):
    n_i, n_d, _ = comp.sizes
    ev = comp.evaluate_all(("inv_rr", "X", "S_pi"), xihat)
    return ev["inv_rr"][n_i:, n_i:], ev["X"][n_i:, :], ev["S_pi"]


def _sc_parts(comp, xihat, subdomain):
    n_i, n_d, n_p = comp.sizes
    ev = comp.evaluate_all(("R_rr", "A_cr", "H_pi"), xihat)
    R = np.triu(ev["R_rr"])
    # R^T R is SPD for any nonsingular R; a diagonal entry of the surrogate may
    # change sign far from the quadrature nodes without harm
    diag = np.abs(np.diag(R))
    if R.size and diag.min() <= 1e-12 * diag.max():
        raise SPDError("evaluated Cholesky factor is singular", subdomain,
                       {"min_abs_diag": float(diag.min())})
    n_r = n_i + n_d
    # inverse of R^T R restricted to Delta rows: solve R^T Y = E_Delta, then R^-1
    E = np.zeros((n_r, n_d))
    E[n_i:, :] = np.eye(n_d)
    B = sla.solve_triangular(R, E, trans="T")
    inv_dd = B.T @ B
    X = sla.solve_triangular(R, sla.solve_triangular(R, ev["A_cr"].T, trans="T"))
    H = ev["H_pi"]
    return inv_dd, X[n_i:, :], H @ H.T


def instantiate(offline: OfflineData, sample: SampleVector, global_basis: KLBasis,
                problem, method: str | None = None) -> OnlineInstance:
    """Sample-specific stochastic BDDC preconditioner.

    A coarse matrix that fails to factorize is reported through ``spd_ok``
    and ``failure`` instead of raising; the caller decides what to do.
    """
    method = offline.method if method is None else method
    if method != offline.method:
        raise ValueError(f"offline data was built for {offline.method!r}, not {method!r}")
    mesh, part = problem.mesh, problem.partition
    a = evaluate_field(global_basis, sample.xi)
    kappa = np.exp(a)
    xihat = subdomain_coordinates(offline, mesh, a)
    weights = rho_scaling(part, kappa)

    inst = OnlineInstance(int(sample.seed), method, xihat, weights, None, False,
                          parts={"kappa": kappa, "field": a})
    inv_dd, x_delta, s_pi = [], [], []
    try:
        for i in range(mesh.n_subdomains):
            comp = offline.for_subdomain(i)
            parts = _sg_parts(comp, xihat[i]) if method == "sg" else _sc_parts(comp, xihat[i], i)
            inv_dd.append(parts[0])
            x_delta.append(parts[1])
            s_pi.append(parts[2])
        inst.preconditioner = assemble_preconditioner(part, weights, inv_dd, x_delta, s_pi)
        inst.spd_ok = True
    except SPDError as exc:
        inst.failure = exc
    inst.factorizations.append(("S_Pi", part.n_pi))
    return inst


# ---------------------------------------------------------------- surrogate Schur

@dataclass
class SurrogateSchurSystem:
    """Interface system assembled entirely from PC surrogates.

    Per subdomain ``S`` is the evaluated Schur complement, ``Y`` the action
    A_II^-1 A_GI^T and ``z``, ``w`` the load terms A_II^-1 f_I and
    A_GI A_II^-1 f_I.
    """

    operator: SchurOperator
    Y: list
    z: list
    w: list

    def rhs(self, f) -> np.ndarray:
        p = self.operator.partition
        g = np.asarray(f, dtype=float)[p.gamma].copy()
        for idx, w in zip(p.local_gamma, self.w):
            np.add.at(g, idx, -w)
        return g

    def recover(self, f, u_gamma) -> np.ndarray:
        p = self.operator.partition
        u = np.zeros(p.n_free)
        u[p.gamma] = u_gamma
        for i, (Y, z) in enumerate(zip(self.Y, self.z)):
            if len(z):
                u[p.interior[i]] = z - Y @ u_gamma[p.local_gamma[i]]
        return u


def surrogate_schur(offline: OfflineData, instance: OnlineInstance, problem) -> SurrogateSchurSystem:
    if not offline.schur:
        raise ValueError("offline data was built without the Schur surrogates")
    part = problem.partition
    f = problem.load
    S_list, Y_list, z_list, w_list = [], [], [], []
    for i in range(problem.n_subdomains):
        comp = offline.for_subdomain(i)
        fi = f[part.interior[i]]
        xh = instance.xihat[i]
        if comp.method == "sg":
            ev = comp.evaluate_all(("S_G", "Y_I", "W", "inv_II"), xh)
            S, Y = ev["S_G"], ev["Y_I"]
            w = ev["W"] @ fi
            z = ev["inv_II"] @ fi
        else:
            ev = comp.evaluate_all(("R_II", "A_GI", "H_G"), xh)
            R = np.triu(ev["R_II"])
            if R.size:
                Y = sla.solve_triangular(R, sla.solve_triangular(R, ev["A_GI"].T, trans="T"))
                z = sla.solve_triangular(R, sla.solve_triangular(R, fi, trans="T"))
            else:
                Y = np.zeros((0, ev["A_GI"].shape[0]))
                z = np.zeros(0)
            S = ev["H_G"] @ ev["H_G"].T
            w = ev["A_GI"] @ z
        S_list.append(0.5 * (S + S.T))
        Y_list.append(Y)
        z_list.append(z)
        w_list.append(w)
    op = SchurOperator(part, S_list, "surrogate")
    return SurrogateSchurSystem(op, Y_list, z_list, w_list)

