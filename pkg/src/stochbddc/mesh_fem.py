"""Structured P1 triangulation of the unit square and its substructuring.

The unit square is split into ``ns x ns`` square subdomains, each carrying
``n x n`` square cells; every cell is cut along its lower-left to upper-right
diagonal.  Nodes and cells are numbered row-major in (y, x).  Homogeneous
Dirichlet nodes are eliminated, so every "dof" below is a free interior node.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class Mesh:
    ns: int
    n: int
    nodes: np.ndarray           # (n_nodes, 2)
    cells: np.ndarray           # (n_cells, 3) counter-clockwise node triples
    areas: np.ndarray           # (n_cells,)
    boundary_mask: np.ndarray   # (n_nodes,) bool
    cell_subdomain: np.ndarray  # (n_cells,) subdomain id, row-major

    @property
    def n_side(self) -> int:
        return self.ns * self.n

    @property
    def h(self) -> float:
        return 1.0 / self.n_side

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_subdomains(self) -> int:
        return self.ns * self.ns

    @property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.cells].mean(axis=1)

    @property
    def free_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    @property
    def node_to_dof(self) -> np.ndarray:
        """Free-dof number of every node, -1 on the Dirichlet boundary."""
        out = np.full(self.n_nodes, -1, dtype=np.int64)
        free = self.free_nodes
        out[free] = np.arange(len(free))
        return out

    def subdomain_cells(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.cell_subdomain == i)


def build_mesh(ns: int, n: int) -> Mesh:
    if ns < 1 or n < 1:
        raise ValueError(f"ns and n must be positive, got ns={ns}, n={n}")
    N = ns * n
    h = 1.0 / N
    ix, iy = np.meshgrid(np.arange(N + 1), np.arange(N + 1))
    nodes = np.column_stack([ix.ravel() * h, iy.ravel() * h])
    boundary = ((ix == 0) | (ix == N) | (iy == 0) | (iy == N)).ravel()

    ci, cj = np.meshgrid(np.arange(N), np.arange(N))
    ci, cj = ci.ravel(), cj.ravel()
    ll = cj * (N + 1) + ci
    lr, ul = ll + 1, ll + N + 1
    ur = ul + 1
    cells = np.empty((2 * N * N, 3), dtype=np.int64)
    cells[0::2] = np.column_stack([ll, lr, ur])
    cells[1::2] = np.column_stack([ll, ur, ul])
    areas = np.full(len(cells), 0.5 * h * h)
    sub = (cj // n) * ns + (ci // n)
    return Mesh(ns, n, nodes, cells, areas, boundary, np.repeat(sub, 2))


@dataclass(frozen=True)
class DofPartition:
    """Interior / dual / primal classification of the free dofs.

    Per subdomain ``i`` the local dofs are ordered ``[I, Delta, Pi]``; the
    leading ``I + Delta`` block is the "r" space, the trailing ``Pi`` block the
    "c" space, and ``[Delta, Pi]`` is the local interface.

    The partially assembled interface space stores the shared primal values
    first and then, subdomain after subdomain, that subdomain's private copy
    of its dual values.
    """

    n_free: int
    interior: list              # per subdomain: global dof ids of I^(i)
    gamma: np.ndarray           # global dof ids of the interface, sorted
    primal: np.ndarray          # global dof ids of Pi, sorted
    dual: np.ndarray            # global dof ids of Delta, sorted
    local_dofs: list            # per subdomain: global dof ids ordered [I, Delta, Pi]
    n_interior: np.ndarray      # per subdomain |I^(i)|
    n_dual: np.ndarray          # per subdomain |Delta^(i)|
    n_primal: np.ndarray        # per subdomain |Pi^(i)|
    local_gamma: list           # per subdomain: positions in ``gamma`` of [Delta, Pi]
    local_primal: list          # per subdomain: positions in ``primal`` (R_Pi^(i))
    local_dual: list            # per subdomain: positions in ``gamma`` of Delta^(i)
    dual_offsets: np.ndarray    # start of subdomain i's Delta copies (after the Pi block)
    tilde_to_gamma: np.ndarray  # R~_Gamma as an index array into ``gamma``
    node_cell_average: sp.csr_matrix = field(repr=False)  # Delta copy -> adjacent-cell mean

    @property
    def n_subdomains(self) -> int:
        return len(self.local_dofs)

    @property
    def n_gamma(self) -> int:
        return len(self.gamma)

    @property
    def n_pi(self) -> int:
        return len(self.primal)

    @property
    def n_tilde(self) -> int:
        return len(self.tilde_to_gamma)

    @property
    def n_dual_copies(self) -> int:
        return self.n_tilde - self.n_pi

    def n_r(self, i: int) -> int:
        return int(self.n_interior[i] + self.n_dual[i])

    def dual_slice(self, i: int) -> slice:
        """Slice of subdomain ``i``'s Delta copies in the dual-copy block."""
        start = int(self.dual_offsets[i])
        return slice(start, start + int(self.n_dual[i]))

    # R~_Gamma and its transpose
    def to_tilde(self, u_gamma: np.ndarray) -> np.ndarray:
        return u_gamma[self.tilde_to_gamma]

    def from_tilde(self, w: np.ndarray) -> np.ndarray:
        return np.bincount(self.tilde_to_gamma, weights=w, minlength=self.n_gamma)

    def gamma_position(self) -> np.ndarray:
        """Map global dof -> position in ``gamma`` (-1 for interior dofs)."""
        pos = np.full(self.n_free, -1, dtype=np.int64)
        pos[self.gamma] = np.arange(self.n_gamma)
        return pos


def _node_subdomains(ix: int, iy: int, n: int) -> list:
    cols = [ix // n - 1, ix // n] if ix % n == 0 else [ix // n]
    rows = [iy // n - 1, iy // n] if iy % n == 0 else [iy // n]
    return rows, cols


def classify_dofs(mesh: Mesh) -> DofPartition:
    ns, n, N = mesh.ns, mesh.n, mesh.n_side
    node_to_dof = mesh.node_to_dof
    n_free = int((node_to_dof >= 0).sum())
    nsub = ns * ns

    interior = [[] for _ in range(nsub)]
    dual_of = [[] for _ in range(nsub)]
    primal_of = [[] for _ in range(nsub)]
    primal, dual = [], []
    for iy in range(1, N):
        for ix in range(1, N):
            dof = int(node_to_dof[iy * (N + 1) + ix])
            rows, cols = _node_subdomains(ix, iy, n)
            owners = [r * ns + c for r in rows for c in cols]
            if len(owners) == 1:
                interior[owners[0]].append(dof)
            elif len(owners) == 2:
                dual.append(dof)
                for s in owners:
                    dual_of[s].append(dof)
            else:
                primal.append(dof)
                for s in owners:
                    primal_of[s].append(dof)

    primal = np.array(sorted(primal), dtype=np.int64)
    dual = np.array(sorted(dual), dtype=np.int64)
    gamma = np.union1d(primal, dual).astype(np.int64)
    gpos = np.full(n_free, -1, dtype=np.int64)
    gpos[gamma] = np.arange(len(gamma))
    ppos = np.full(n_free, -1, dtype=np.int64)
    ppos[primal] = np.arange(len(primal))

    local_dofs, local_gamma, local_primal, local_dual = [], [], [], []
    nI, nD, nP = [], [], []
    for s in range(nsub):
        I = np.array(sorted(interior[s]), dtype=np.int64)
        D = np.array(sorted(dual_of[s]), dtype=np.int64)
        P = np.array(sorted(primal_of[s]), dtype=np.int64)
        interior[s] = I
        local_dofs.append(np.concatenate([I, D, P]))
        local_gamma.append(gpos[np.concatenate([D, P])])
        local_primal.append(ppos[P])
        local_dual.append(gpos[D])
        nI.append(len(I))
        nD.append(len(D))
        nP.append(len(P))
    nD = np.array(nD, dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(nD)[:-1]]).astype(np.int64)
    tilde_to_gamma = np.concatenate([gpos[primal]] + local_dual).astype(np.int64)

    avg = _dual_cell_average(mesh, local_dofs, nI, nD)
    return DofPartition(
        n_free=n_free, interior=interior, gamma=gamma, primal=primal, dual=dual,
        local_dofs=local_dofs, n_interior=np.array(nI, dtype=np.int64),
        n_dual=nD, n_primal=np.array(nP, dtype=np.int64),
        local_gamma=local_gamma, local_primal=local_primal, local_dual=local_dual,
        dual_offsets=offsets, tilde_to_gamma=tilde_to_gamma, node_cell_average=avg,
    )


def _dual_cell_average(mesh, local_dofs, nI, nD) -> sp.csr_matrix:
    """Row k averages a per-cell field over the cells of the owning subdomain
    that touch the node of dual copy k."""
    free = mesh.free_nodes
    rows, cols = [], []
    k = 0
    for s, dofs in enumerate(local_dofs):
        cells = mesh.subdomain_cells(s)
        conn = mesh.cells[cells]
        for dof in dofs[nI[s]:nI[s] + nD[s]]:
            node = free[dof]
            touching = cells[(conn == node).any(axis=1)]
            rows.extend([k] * len(touching))
            cols.extend(touching.tolist())
            k += 1
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    counts = np.bincount(rows, minlength=k).astype(float)
    vals = 1.0 / counts[rows]
    return sp.csr_matrix((vals, (rows, cols)), shape=(k, mesh.n_cells))


def source_term(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return 2.0 * np.pi ** 2 * np.sin(np.pi * x) * np.sin(np.pi * y)


def load_vector(mesh: Mesh, f=source_term) -> np.ndarray:
    """Right-hand side over the free dofs.

    ``f`` is replaced by its nodal P1 interpolant; the product with a hat
    function is then quadratic on every cell and the edge-midpoint rule
    integrates it exactly.
    """
    fn = f(mesh.nodes[:, 0], mesh.nodes[:, 1])
    conn = mesh.cells
    # midpoint of edge (a, b): hat values 1/2 at a and b, interpolant mean of f_a, f_b
    out = np.zeros(mesh.n_nodes)
    w = mesh.areas / 3.0
    for a, b in ((0, 1), (1, 2), (2, 0)):
        fm = 0.5 * (fn[conn[:, a]] + fn[conn[:, b]])
        np.add.at(out, conn[:, a], 0.5 * fm * w)
        np.add.at(out, conn[:, b], 0.5 * fm * w)
    return out[mesh.free_nodes]


def mass_matrix(mesh: Mesh, free_only: bool = True) -> sp.csr_matrix:
    """Consistent P1 mass matrix."""
    local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    conn = mesh.cells
    rows = np.repeat(conn, 3, axis=1).ravel()
    cols = np.tile(conn, (1, 3)).ravel()
    vals = (mesh.areas[:, None, None] * local[None]).ravel()
    M = sp.csr_matrix((vals, (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
    if free_only:
        free = mesh.free_nodes
        M = M[free][:, free]
    return M.tocsr()
