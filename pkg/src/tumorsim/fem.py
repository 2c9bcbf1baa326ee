"""P1 assembly: lumped mass, weighted tensor stiffness, sparse solves."""
from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .mesh import SimplicialMesh

DIRECT_LIMIT = 20_000


class SolverError(RuntimeError):
    pass


def lumped_mass(mesh: SimplicialMesh) -> np.ndarray:
    """Nodal weights (1, chi_j): each cell gives measure/(d+1) to its vertices."""
    k = mesh.dim + 1
    share = np.repeat(mesh.measures / k, k)
    return np.bincount(mesh.cells.ravel(), weights=share, minlength=mesh.n_nodes)


def lumped_inner(f, g, weights) -> float:
    f, g, w = (np.asarray(a, dtype=float) for a in (f, g, weights))
    if not f.shape == g.shape == w.shape:
        raise ValueError("lumped_inner: length mismatch")
    return float(np.dot(w, f * g))


def lumped_cell_average(mesh: SimplicialMesh, cell_values, weights=None) -> np.ndarray:
    """Nodal value whose lumped integral matches the per-cell field.

    ``w_j * out_j = sum_{K ni j} |K|/(d+1) * v_K``.
    """
    if weights is None:
        weights = lumped_mass(mesh)
    k = mesh.dim + 1
    share = np.repeat(mesh.measures * np.asarray(cell_values, dtype=float) / k, k)
    return np.bincount(mesh.cells.ravel(), weights=share, minlength=mesh.n_nodes) / weights


def local_stiffness(mesh: SimplicialMesh, tensors) -> np.ndarray:
    """Per-cell matrices |K| G_K M_K G_K^T, shape (m, d+1, d+1)."""
    G = mesh.grads
    return np.einsum("k,kia,kab,kjb->kij", mesh.measures, G, tensors, G)


class StiffnessAssembler:
    """Reassembles one tensor's stiffness with varying cell coefficients."""

    def __init__(self, mesh: SimplicialMesh, tensors):
        self.mesh = mesh
        self.local = local_stiffness(mesh, tensors)
        k = mesh.dim + 1
        self._rows = np.repeat(mesh.cells, k, axis=1).ravel()
        self._cols = np.tile(mesh.cells, (1, k)).ravel()
        self._plain = None

    def cell_coefficient(self, nodal_coeff=None, cell_factor=None):
        """Arithmetic mean of vertex values per cell, times an optional cell factor."""
        c = np.ones(self.mesh.n_cells)
        if nodal_coeff is not None:
            nodal_coeff = np.asarray(nodal_coeff, dtype=float)
            if not np.all(np.isfinite(nodal_coeff)):
                raise ValueError("stiffness coefficient must be finite")
            if np.any(nodal_coeff < 0):
                raise ValueError("stiffness coefficient must be >= 0")
            c = nodal_coeff[self.mesh.cells].mean(axis=1)
        if cell_factor is not None:
            c = c * np.asarray(cell_factor, dtype=float)
        return c

    def assemble(self, nodal_coeff=None, cell_factor=None) -> sparse.csr_matrix:
        if nodal_coeff is None and cell_factor is None:
            if self._plain is None:
                self._plain = self._build(self.local)
            return self._plain
        c = self.cell_coefficient(nodal_coeff, cell_factor)
        return self._build(self.local * c[:, None, None])

    def upwind_apply(self, donor, potential):
        """Donor-cell version of ``assemble(donor) @ potential``.

        Each cell edge carries the flux ``-S_ij (u_i - u_j)`` towards the
        higher potential, weighted by ``donor`` at the node it leaves instead
        of the cell mean.  Conservative, and the outflow of a node is
        proportional to its own ``donor`` value.
        """
        donor = np.asarray(donor, dtype=float)
        u = np.asarray(potential, dtype=float)
        cells = self.mesh.cells
        out = np.zeros(self.mesh.n_nodes)
        k = cells.shape[1]
        for i in range(k):
            for j in range(i + 1, k):
                ni, nj = cells[:, i], cells[:, j]
                q = -self.local[:, i, j] * (u[ni] - u[nj])  # > 0: flow from j to i
                f = q * np.where(q > 0, donor[nj], donor[ni])
                out += np.bincount(ni, weights=f, minlength=out.size)
                out -= np.bincount(nj, weights=f, minlength=out.size)
        return out

    def _build(self, local):
        n = self.mesh.n_nodes
        A = sparse.coo_matrix((local.ravel(), (self._rows, self._cols)), shape=(n, n))
        return A.tocsr()


def _tensors(mesh, selector):
    if selector == "D":
        return mesh.cell_D
    if selector == "T":
        return mesh.cell_T
    if selector in ("I", None):
        return np.broadcast_to(np.eye(mesh.dim), (mesh.n_cells, mesh.dim, mesh.dim))
    raise ValueError(f"unknown tensor selector {selector!r}")


def assemble_stiffness(mesh: SimplicialMesh, tensor_selector="I", nodal_coeff=None,
                       cell_factor=None) -> sparse.csr_matrix:
    """Stiffness (c_K M_K grad phi_i, grad phi_j) with c_K the vertex mean of nodal_coeff."""
    return StiffnessAssembler(mesh, _tensors(mesh, tensor_selector)).assemble(
        nodal_coeff, cell_factor)


class Operators:
    """Mesh-level operators shared by every time step."""

    def __init__(self, mesh: SimplicialMesh):
        self.mesh = mesh
        self.weights = lumped_mass(mesh)
        self.assembler = {s: StiffnessAssembler(mesh, _tensors(mesh, s)) for s in "IDT"}

    def stiffness(self, selector, nodal_coeff=None, cell_factor=None):
        return self.assembler[selector].assemble(nodal_coeff, cell_factor)

    @property
    def W(self):
        return sparse.diags(self.weights)


def _residual(A, x, rhs):
    r = np.linalg.norm(A @ x - rhs)
    return r, np.linalg.norm(rhs)


def solve_linear(A, rhs, tol=1e-10, symmetric_pd=False, maxiter=None):
    """Solve ``A x = rhs`` to relative residual ``tol``.

    Systems up to ``DIRECT_LIMIT`` unknowns are factorized directly; larger
    ones use Jacobi-preconditioned CG (SPD) or BiCGSTAB.
    """
    A = sparse.csr_matrix(A)
    rhs = np.asarray(rhs, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or rhs.shape != (n,):
        raise ValueError("solve_linear: shape mismatch")
    if not np.any(rhs):
        return np.zeros(n)
    if n <= DIRECT_LIMIT:
        try:
            x = spla.splu(A.tocsc()).solve(rhs)
        except RuntimeError as exc:
            raise SolverError(f"singular system: {exc}") from None
    else:
        d = A.diagonal()
        if np.any(d == 0):
            raise SolverError("zero diagonal, cannot precondition")
        M = sparse.diags(1.0 / d)
        maxiter = maxiter or 10 * n
        method = spla.cg if symmetric_pd else spla.bicgstab
        x, info = method(A, rhs, rtol=tol, atol=0.0, maxiter=maxiter, M=M)
        if info < 0:
            raise SolverError("iterative solver breakdown")
    r, b = _residual(A, x, rhs)
    if not np.isfinite(r) or r > tol * b:
        raise SolverError(f"linear solve did not reach tolerance: residual {r / b:.3e}")
    return x


class Factorized:
    """Sparse LU of a matrix reused for many right-hand sides."""

    def __init__(self, A, tol=1e-10):
        self.A = sparse.csc_matrix(A)
        self.tol = tol
        try:
            self._lu = spla.splu(self.A)
        except RuntimeError as exc:
            raise SolverError(f"singular system: {exc}") from None

    def solve(self, rhs):
        x = self._lu.solve(rhs)
        r, b = _residual(self.A, x, rhs)
        if b > 0 and (not np.isfinite(r) or r > self.tol * b):
            # one step of iterative refinement before giving up
            x = x + self._lu.solve(rhs - self.A @ x)
            r, b = _residual(self.A, x, rhs)
            if not np.isfinite(r) or r > self.tol * b:
                raise SolverError(f"factorized solve residual {r / b:.3e}")
        return x
