"""Hermite polynomial chaos: multi-indices, orthonormal Hermite polynomials,
Gaussian triple products and matrix-valued PC expansions.

All polynomials are the probabilists' Hermite polynomials normalized so that
E[psi_j psi_k] = delta_jk for a standard normal argument.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb, lgamma

import numpy as np


@dataclass(frozen=True)
class MultiIndexSet:
    """Total-degree set {alpha in N^dim : |alpha| <= degree}.

    Ordered by grade, then by descending lexicographic order inside a grade,
    so index 0 is the zero multi-index and indices 1..dim are the first-order
    terms in variable order.  Sets of lower degree are prefixes of sets of
    higher degree.
    """

    dim: int
    degree: int
    indices: np.ndarray  # (size, dim) int

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def size(self) -> int:
        return len(self.indices)

    def position(self, alpha) -> int:
        return _lookup(self.dim, self.degree)[tuple(int(a) for a in alpha)]

    def prefix_size(self, degree: int) -> int:
        return comb(self.dim + degree, degree)


def _compositions(total: int, dim: int):
    """All alpha with |alpha| = total, in descending lexicographic order."""
    if dim == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, dim - 1):
            yield (first,) + rest


@lru_cache(maxsize=None)
def multi_index_set(m: int, d: int) -> MultiIndexSet:
    if m < 1 or d < 0:
        raise ValueError(f"need m >= 1 and d >= 0, got m={m}, d={d}")
    rows = [alpha for grade in range(d + 1) for alpha in _compositions(grade, m)]
    idx = np.array(rows, dtype=np.int64).reshape(-1, m)
    idx.setflags(write=False)
    return MultiIndexSet(m, d, idx)


@lru_cache(maxsize=None)
def _lookup(m: int, d: int) -> dict:
    return {tuple(a): k for k, a in enumerate(multi_index_set(m, d).indices.tolist())}


def hermite_table(kmax: int, x) -> np.ndarray:
    """psi_0..psi_kmax at ``x``; result has shape (kmax + 1, *x.shape)."""
    x = np.asarray(x, dtype=float)
    out = np.empty((kmax + 1,) + x.shape)
    out[0] = 1.0
    if kmax >= 1:
        out[1] = x
    for k in range(1, kmax):
        out[k + 1] = (x * out[k] - np.sqrt(k) * out[k - 1]) / np.sqrt(k + 1)
    return out


def hermite_eval(k: int, x):
    if k < 0:
        raise ValueError("degree must be nonnegative")
    return hermite_table(k, x)[k]


def basis_values(index_set: MultiIndexSet, xi) -> np.ndarray:
    """psi_alpha(xi) for every alpha; ``xi`` of shape (..., dim) -> (..., size)."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != index_set.dim:
        raise ValueError(f"expected {index_set.dim} coordinates, got {xi.shape[-1]}")
    tab = hermite_table(index_set.degree, xi)           # (deg+1, ..., dim)
    tab = np.moveaxis(tab, 0, -1)                       # (..., dim, deg+1)
    idx = index_set.indices                             # (size, dim)
    vals = np.ones(xi.shape[:-1] + (index_set.size,))
    for l in range(index_set.dim):
        vals *= tab[..., l, :][..., idx[:, l]]
    return vals


def _lfact(k) -> float:
    return lgamma(k + 1)


def univariate_triple(i: int, j: int, k: int) -> float:
    """E[psi_i psi_j psi_k] for a standard normal argument."""
    total = i + j + k
    if total % 2:
        return 0.0
    s = total // 2
    if s < i or s < j or s < k:
        return 0.0
    logv = 0.5 * (_lfact(i) + _lfact(j) + _lfact(k)) - _lfact(s - i) - _lfact(s - j) - _lfact(s - k)
    return float(np.exp(logv))


@lru_cache(maxsize=None)
def triple_table(kmax: int) -> np.ndarray:
    """All univariate triple products with degrees <= kmax."""
    t = np.zeros((kmax + 1,) * 3)
    for i in range(kmax + 1):
        for j in range(i, kmax + 1):
            for k in range(j, kmax + 1):
                v = univariate_triple(i, j, k)
                for p in {(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)}:
                    t[p] = v
    t.setflags(write=False)
    return t


def triple_product(alpha, beta, gamma) -> float:
    alpha, beta, gamma = (np.atleast_1d(np.asarray(a, dtype=np.int64)) for a in (alpha, beta, gamma))
    if not alpha.shape == beta.shape == gamma.shape:
        raise ValueError("multi-indices must have the same length")
    kmax = int(max(alpha.max(initial=0), beta.max(initial=0), gamma.max(initial=0)))
    t = triple_table(kmax)
    return float(np.prod(t[alpha, beta, gamma]))


@lru_cache(maxsize=None)
def galerkin_tensor(m: int, d: int) -> np.ndarray:
    """T[a, k, l] = E[psi_a psi_k psi_l], a over the degree-2d set, k, l over degree d."""
    big = multi_index_set(m, 2 * d).indices
    small = multi_index_set(m, d).indices
    t = triple_table(2 * d)
    out = np.ones((len(big), len(small), len(small)))
    for l in range(m):
        out *= t[big[:, l][:, None, None], small[:, l][None, :, None], small[:, l][None, None, :]]
    out.setflags(write=False)
    return out


def lognormal_pc_coeff(c, k: int):
    """E[exp(c xi) psi_k(xi)] = exp(c^2/2) c^k / sqrt(k!)."""
    c = np.asarray(c, dtype=float)
    if k < 0:
        raise ValueError("degree must be nonnegative")
    return np.exp(0.5 * c * c) * c ** k / np.exp(0.5 * _lfact(k))


def lognormal_pc_coeffs(c: np.ndarray, index_set: MultiIndexSet) -> np.ndarray:
    """PC coefficients of exp(sum_m c_m xi_m), one row per entry of ``c``.

    ``c`` has shape (n, dim); the result has shape (n, size).  The expectation
    factorizes over independent coordinates.
    """
    c = np.asarray(c, dtype=float)
    d = index_set.degree
    k = np.arange(d + 1)
    lf = np.array([_lfact(i) for i in k])
    # per coordinate c^k / sqrt(k!)
    powers = c[..., None] ** k / np.exp(0.5 * lf)      # (n, dim, d+1)
    out = np.exp(0.5 * (c * c).sum(axis=-1))[:, None] * np.ones((1, index_set.size))
    for l in range(index_set.dim):
        out *= powers[:, l, index_set.indices[:, l]]
    return out


def gauss_hermite(q: int):
    """q-point rule for E[g(xi)], xi ~ N(0, 1)."""
    if q < 1:
        raise ValueError("need at least one node")
    x, w = np.polynomial.hermite_e.hermegauss(q)
    return x, w / np.sqrt(2.0 * np.pi)


def tensor_gauss_hermite(q: int, m: int):
    x, w = gauss_hermite(q)
    grids = np.meshgrid(*([x] * m), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    wgrids = np.meshgrid(*([w] * m), indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
    return nodes, weights


@dataclass(frozen=True)
class PCMatrix:
    """Matrix-valued expansion sum_alpha A_alpha psi_alpha(xi)."""

    index_set: MultiIndexSet
    coeffs: np.ndarray  # (size, *shape)
    symmetric: bool = False

    def __post_init__(self):
        if self.coeffs.shape[0] != self.index_set.size:
            raise ValueError("one coefficient block per multi-index required")

    @property
    def dim(self) -> int:
        return self.index_set.dim

    @property
    def shape(self) -> tuple:
        return self.coeffs.shape[1:]

    def __add__(self, other: "PCMatrix") -> "PCMatrix":
        if other.index_set != self.index_set:
            raise ValueError("expansions live on different index sets")
        return PCMatrix(self.index_set, self.coeffs + other.coeffs,
                        self.symmetric and other.symmetric)

    def truncate(self, degree: int) -> "PCMatrix":
        if degree > self.index_set.degree:
            raise ValueError("cannot truncate to a higher degree")
        sub = multi_index_set(self.dim, degree)
        return PCMatrix(sub, self.coeffs[:sub.size], self.symmetric)

    def evaluate(self, xihat) -> np.ndarray:
        return pc_evaluate(self, xihat)


def pc_evaluate(p: PCMatrix, xihat) -> np.ndarray:
    xihat = np.asarray(xihat, dtype=float)
    if xihat.shape != (p.dim,):
        raise ValueError(f"expansion has {p.dim} variables, got coordinates of shape {xihat.shape}")
    psi = basis_values(p.index_set, xihat)
    return np.tensordot(psi, p.coeffs, axes=(0, 0))
