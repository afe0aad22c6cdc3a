"""Gaussian covariance, discrete Karhunen-Loeve bases and sampling.

The covariance operator is discretized by a Nystrom rule at cell centroids
with area weights, matching the piecewise-constant coefficient used by the
finite element model.  With weights ``w`` the discrete eigenproblem

    sum_j C(x_i, x_j) w_j a_j = lambda a_i

is symmetrized as ``W^1/2 C W^1/2 b = lambda b`` with ``a = W^-1/2 b``, so
the modes are orthonormal in ``sum_cells a_j a_k w``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

KL_CACHE_VERSION = 1

# above this many cells the kernel is never formed densely
DENSE_KL_LIMIT = 4096


class KLError(RuntimeError):
    pass


@dataclass(frozen=True)
class CovarianceSpec:
    sigma2: float
    ell: float

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if not self.ell > 0:
            raise ValueError(f"ell must be positive, got {self.ell}")


def covariance(x, y, spec: CovarianceSpec):
    """sigma^2 exp(-|x - y|^2 / l); broadcasts over leading axes."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d2 = ((x - y) ** 2).sum(axis=-1)
    return spec.sigma2 * np.exp(-d2 / spec.ell)


@dataclass(frozen=True)
class KLBasis:
    lambdas: np.ndarray         # (m,) descending
    modes: np.ndarray           # (n_cells, m) per-cell eigenfunction values
    weights: np.ndarray         # (n_cells,) cell areas
    total_variance: float       # trace of the covariance operator = sum of all eigenvalues
    spectrum: np.ndarray | None = None  # every eigenvalue, when the dense solver ran

    @property
    def count(self) -> int:
        return len(self.lambdas)

    def energy_fraction(self, k: int) -> float:
        return float(self.lambdas[:k].sum() / self.total_variance)

    def truncated(self, m: int) -> "KLBasis":
        if m > self.count:
            raise ValueError(f"basis holds {self.count} modes, asked for {m}")
        return KLBasis(self.lambdas[:m], self.modes[:, :m], self.weights,
                       self.total_variance, self.spectrum)

    def truncation_error(self, m: int) -> float:
        """Expected squared L2 error of the m-term expansion (modes have unit norm)."""
        if self.spectrum is not None:
            return float(self.spectrum[m:].sum())
        return float(self.total_variance - self.lambdas[:m].sum())


def _fix_signs(modes: np.ndarray) -> np.ndarray:
    # first entry within a relative 1e-6 of the largest magnitude; symmetric
    # modes often peak at several cells with opposite signs
    mag = np.abs(modes)
    idx = (mag >= (1 - 1e-6) * mag.max(axis=0)).argmax(axis=0)
    signs = np.sign(modes[idx, np.arange(modes.shape[1])])
    signs[signs == 0] = 1.0
    return modes * signs


def _separable_operator(centroids, weights, spec):
    """Weighted kernel as a LinearOperator, using exp(-|x-y|^2/l) = kx * ky.

    Centroids of a structured mesh take few distinct x and y values, so the
    product is applied on the tensor grid of those values.
    """
    ux, ix = np.unique(centroids[:, 0], return_inverse=True)
    uy, iy = np.unique(centroids[:, 1], return_inverse=True)
    kx = np.exp(-(ux[:, None] - ux[None, :]) ** 2 / spec.ell)
    ky = np.exp(-(uy[:, None] - uy[None, :]) ** 2 / spec.ell)
    sw = np.sqrt(weights)
    n = len(weights)

    def matvec(v):
        v = np.asarray(v).ravel()
        grid = np.zeros((len(uy), len(ux)))
        np.add.at(grid, (iy, ix), sw * v)
        out = ky @ grid @ kx
        return spec.sigma2 * sw * out[iy, ix]

    return spla.LinearOperator((n, n), matvec=matvec, dtype=float)


def discrete_kl(centroids, weights, spec: CovarianceSpec, m: int,
                method: str = "auto") -> KLBasis:
    """Leading ``m`` eigenpairs of the area-weighted covariance.

    ``method="dense"`` runs a full symmetric eigendecomposition and keeps
    the whole spectrum; ``"iterative"`` applies the separable kernel
    matrix-free and computes only the leading pairs.
    """
    centroids = np.asarray(centroids, dtype=float)
    weights = np.asarray(weights, dtype=float)
    n = len(weights)
    if not 1 <= m <= n:
        raise ValueError(f"truncation m={m} must lie in [1, {n}]")
    if method == "auto":
        method = "dense" if n <= DENSE_KL_LIMIT else "iterative"
    total = float(spec.sigma2 * weights.sum())
    sw = np.sqrt(weights)

    if method == "dense":
        d2 = ((centroids[:, None, :] - centroids[None, :, :]) ** 2).sum(-1)
        K = spec.sigma2 * np.exp(-d2 / spec.ell) * np.outer(sw, sw)
        try:
            vals, vecs = sla.eigh(K)
        except sla.LinAlgError as exc:
            raise KLError(f"dense eigensolver failed on {n} cells: {exc}") from exc
        vals, vecs = vals[::-1], vecs[:, ::-1]
        spectrum = np.clip(vals, 0.0, None)
        lam, b = spectrum[:m], vecs[:, :m]
    elif method == "iterative":
        if m >= n - 1:
            raise ValueError("iterative KL needs m < n - 1; use method='dense'")
        op = _separable_operator(centroids, weights, spec)
        try:
            # fixed start vector: ARPACK otherwise draws a random one per process
            vals, vecs = spla.eigsh(op, k=m, which="LA", tol=1e-13,
                                    ncv=min(n, max(2 * m + 1, 20)), v0=sw)
        except spla.ArpackNoConvergence as exc:
            raise KLError(f"ARPACK did not converge for {m} modes on {n} cells") from exc
        order = np.argsort(vals)[::-1]
        lam, b = np.clip(vals[order], 0.0, None), vecs[:, order]
        spectrum = None
    else:
        raise ValueError(f"unknown KL method {method!r}")

    modes = _fix_signs(b / sw[:, None])
    return KLBasis(lam.copy(), np.ascontiguousarray(modes), weights.copy(), total, spectrum)


def global_kl(mesh, spec: CovarianceSpec, m: int, method: str = "auto") -> KLBasis:
    return discrete_kl(mesh.centroids, mesh.areas, spec, m, method)


def local_kl(mesh, spec: CovarianceSpec, m: int, subdomain: int) -> KLBasis:
    """KL basis of the covariance restricted to one subdomain's cells."""
    cells = mesh.subdomain_cells(subdomain)
    return discrete_kl(mesh.centroids[cells], mesh.areas[cells], spec, m, "dense")


@dataclass(frozen=True)
class SampleVector:
    xi: np.ndarray
    seed: int


def sample_xi(seed: int, m: int) -> SampleVector:
    if m < 1:
        raise ValueError("need at least one random variable")
    rng = np.random.default_rng(seed)
    return SampleVector(rng.standard_normal(m), int(seed))


def sample_seeds(base_seed: int, count: int) -> np.ndarray:
    """Per-sample 64-bit seeds; identical for every method given ``base_seed``."""
    if count == 0:
        return np.zeros(0, dtype=np.uint64)
    return np.random.SeedSequence(base_seed).generate_state(count, dtype=np.uint64)


def evaluate_field(basis: KLBasis, xi) -> np.ndarray:
    """Per-cell log-coefficient sum_m sqrt(lambda_m) a_m xi_m."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != basis.count:
        raise ValueError(f"expected {basis.count} coordinates, got {xi.shape[-1]}")
    return basis.modes @ (np.sqrt(basis.lambdas) * xi).T


def evaluate_kappa(basis: KLBasis, xi) -> np.ndarray:
    return np.exp(evaluate_field(basis, xi))


def local_coordinates(field_values, basis: KLBasis, rank_tol: float = 1e-14) -> np.ndarray:
    """Projection of a per-cell log-field onto a local KL basis.

    xi_m = (1 / sqrt(lambda_m)) sum_cells a(cell) a_m(cell) w_cell
    """
    lam = basis.lambdas
    if np.any(lam <= rank_tol * max(basis.total_variance, 1e-300)):
        raise KLError("local KL mode count exceeds the numerical rank of the covariance")
    proj = basis.modes.T @ (np.asarray(field_values, dtype=float) * basis.weights)
    return proj / np.sqrt(lam)


# ---------------------------------------------------------------- cache

def _kl_key(ns, n, spec, m) -> str:
    payload = json.dumps({"ns": ns, "n": n, "sigma2": spec.sigma2, "ell": spec.ell, "m": m},
                         sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def save_kl(path, basis: KLBasis, ns: int, n: int, spec: CovarianceSpec) -> None:
    arrays = {
        "version": np.array(KL_CACHE_VERSION),
        "key": np.array(_kl_key(ns, n, spec, basis.count)),
        "lambdas": basis.lambdas, "modes": basis.modes, "weights": basis.weights,
        "total_variance": np.array(basis.total_variance),
    }
    if basis.spectrum is not None:
        arrays["spectrum"] = basis.spectrum
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_kl(path, ns: int, n: int, spec: CovarianceSpec, m: int) -> KLBasis | None:
    """Cached basis, or None when the file is missing or was written for other parameters."""
    path = Path(path)
    if not path.exists():
        return None
    with np.load(path) as data:
        if int(data["version"]) != KL_CACHE_VERSION:
            return None
        if str(data["key"]) != _kl_key(ns, n, spec, m):
            return None
        spectrum = data["spectrum"] if "spectrum" in data else None
        return KLBasis(data["lambdas"], data["modes"], data["weights"],
                       float(data["total_variance"]), spectrum)
