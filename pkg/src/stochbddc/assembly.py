"""P1 stiffness assembly for per-cell coefficients and its PC expansion."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .chaos import MultiIndexSet, PCMatrix, lognormal_pc_coeffs
from .mesh_fem import DofPartition, Mesh


class CoefficientError(ValueError):
    pass


def element_stiffness(mesh: Mesh) -> np.ndarray:
    """Unit-coefficient P1 element matrices, shape (n_cells, 3, 3)."""
    p = mesh.nodes[mesh.cells]                    # (nc, 3, 2)
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    # gradients of barycentric coordinates
    g = np.empty((len(p), 3, 2))
    g[:, 1] = np.column_stack([e2[:, 1], -e2[:, 0]]) / det[:, None]
    g[:, 2] = np.column_stack([-e1[:, 1], e1[:, 0]]) / det[:, None]
    g[:, 0] = -g[:, 1] - g[:, 2]
    area = 0.5 * np.abs(det)
    return area[:, None, None] * np.einsum("cia,cja->cij", g, g)


def _check_kappa(kappa):
    kappa = np.asarray(kappa, dtype=float)
    if np.any(~(kappa > 0)):
        raise CoefficientError("coefficient must be positive on every cell")
    return kappa


def assemble_stiffness(mesh: Mesh, kappa, partition: DofPartition | None = None,
                       subdomain: int | None = None, free_only: bool = True) -> sp.csr_matrix:
    """Sparse stiffness matrix for a per-cell coefficient.

    Global scope returns a matrix over the free dofs (or all nodes when
    ``free_only=False``).  With ``subdomain`` the Neumann matrix of that
    subdomain is returned in its local ``[I, Delta, Pi]`` ordering.
    """
    kappa = _check_kappa(kappa)
    ke = element_stiffness(mesh)
    if subdomain is None:
        cells = np.arange(mesh.n_cells)
        if free_only:
            index = mesh.node_to_dof
            size = int((index >= 0).sum())
        else:
            index = np.arange(mesh.n_nodes)
            size = mesh.n_nodes
    else:
        if partition is None:
            raise ValueError("subdomain assembly needs the dof partition")
        return sp.csr_matrix(SubdomainAssembler(mesh, partition, subdomain).matrix(kappa))
    conn = index[mesh.cells[cells]]
    rows = np.repeat(conn, 3, axis=1).ravel()
    cols = np.tile(conn, (1, 3)).ravel()
    vals = (ke[cells] * kappa[cells, None, None]).ravel()
    keep = (rows >= 0) & (cols >= 0)
    return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(size, size))


class SubdomainAssembler:
    """Repeated assembly of one subdomain's Neumann matrix.

    ``matrix(kappa)`` takes a coefficient over *all* mesh cells;
    ``matrices(values)`` takes per-cell values of this subdomain only, one
    column per coefficient field, and returns a stack of dense matrices.
    """

    def __init__(self, mesh: Mesh, partition: DofPartition, subdomain: int):
        self.subdomain = subdomain
        self.cells = mesh.subdomain_cells(subdomain)
        dofs = partition.local_dofs[subdomain]
        self.size = len(dofs)
        node_local = np.full(mesh.n_nodes, -1, dtype=np.int64)
        node_local[mesh.free_nodes[dofs]] = np.arange(self.size)
        conn = node_local[mesh.cells[self.cells]]
        ke = element_stiffness(mesh)[self.cells]
        a = np.repeat(conn, 3, axis=1).ravel()
        b = np.tile(conn, (1, 3)).ravel()
        c = np.repeat(np.arange(len(self.cells)), 9)
        keep = (a >= 0) & (b >= 0)
        self.scatter = sp.csr_matrix(
            (ke.ravel()[keep], (a[keep] * self.size + b[keep], c[keep])),
            shape=(self.size * self.size, len(self.cells)),
        )

    def matrix(self, kappa) -> np.ndarray:
        kappa = _check_kappa(kappa)
        return (self.scatter @ kappa[self.cells]).reshape(self.size, self.size)

    def matrices(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        out = (self.scatter @ values).T
        return out.reshape(-1, self.size, self.size)


@dataclass(frozen=True)
class SubdomainBlocks:
    """Dense subdomain matrix viewed in the ``[I, Delta, Pi]`` block layout."""

    matrix: np.ndarray
    n_i: int
    n_d: int
    n_p: int

    @property
    def n_r(self) -> int:
        return self.n_i + self.n_d

    @property
    def n_c(self) -> int:
        return self.n_p

    # r = I + Delta, c = Pi
    @property
    def A_rr(self):
        return self.matrix[..., :self.n_r, :self.n_r]

    @property
    def A_cr(self):
        return self.matrix[..., self.n_r:, :self.n_r]

    @property
    def A_cc(self):
        return self.matrix[..., self.n_r:, self.n_r:]

    # I against Gamma = Delta + Pi
    @property
    def A_II(self):
        return self.matrix[..., :self.n_i, :self.n_i]

    @property
    def A_GI(self):
        return self.matrix[..., self.n_i:, :self.n_i]

    @property
    def A_GG(self):
        return self.matrix[..., self.n_i:, self.n_i:]

    @property
    def A_DI(self):
        return self.matrix[..., self.n_i:self.n_r, :self.n_i]

    @property
    def A_DD(self):
        return self.matrix[..., self.n_i:self.n_r, self.n_i:self.n_r]

    @property
    def A_PI(self):
        return self.matrix[..., self.n_r:, :self.n_i]

    @property
    def A_PD(self):
        return self.matrix[..., self.n_r:, self.n_i:self.n_r]

    def recombine(self) -> np.ndarray:
        top = np.concatenate([self.A_rr, np.swapaxes(self.A_cr, -1, -2)], axis=-1)
        bottom = np.concatenate([self.A_cr, self.A_cc], axis=-1)
        return np.concatenate([top, bottom], axis=-2)


def split_blocks(A_subdomain, partition: DofPartition, i: int) -> SubdomainBlocks:
    """Works on a single matrix or on a stack of matrices (leading axis)."""
    A = A_subdomain.toarray() if sp.issparse(A_subdomain) else np.asarray(A_subdomain)
    return SubdomainBlocks(A, int(partition.n_interior[i]), int(partition.n_dual[i]),
                           int(partition.n_primal[i]))


def lognormal_cell_coefficients(basis, index_set: MultiIndexSet) -> np.ndarray:
    """Per-cell PC coefficients of exp(sum_m sqrt(lambda_m) a_m(cell) xi_m)."""
    c = basis.modes * np.sqrt(basis.lambdas)[None, :]
    return lognormal_pc_coeffs(c, index_set)


def assemble_pc_matrices(assembler: SubdomainAssembler, basis,
                         index_set: MultiIndexSet) -> PCMatrix:
    """Expansion of the subdomain stiffness in the local KL coordinates."""
    if basis.count != index_set.dim:
        raise ValueError(f"basis has {basis.count} modes but index set dimension {index_set.dim}")
    kcoef = lognormal_cell_coefficients(basis, index_set)   # (n_cells_i, size)
    return PCMatrix(index_set, assembler.matrices(kcoef), symmetric=True)
