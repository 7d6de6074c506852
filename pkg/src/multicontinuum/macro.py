"""Coupled two-continuum macroscopic system on the coarse grid.

Trial and test functions are continuous bilinear on the coarse grid.  Each
coarse block contributes its extensive coefficients times the values and
gradients of U_i and V_j collocated at the block centre, which reproduces
the blockwise sum of the upscaled weak form literally.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import SolverError


@dataclass
class MacroSystem:
    A: sp.csr_matrix
    rhs: np.ndarray
    n_coarse: int
    free: np.ndarray = field(repr=False)  # global unknown index of each row


@dataclass
class MacroSolution:
    U: np.ndarray  # (2, n_coarse + 1, n_coarse + 1), U[i-1, row(x2), col(x1)]
    residual: float = 0.0

    @property
    def n_coarse(self):
        return self.U.shape[1] - 1

    def block_averages(self):
        """(2, n_blocks) exact block means of the bilinear interpolants."""
        U = self.U
        means = 0.25 * (U[:, :-1, :-1] + U[:, :-1, 1:] + U[:, 1:, 1:] + U[:, 1:, :-1])
        return means.reshape(2, -1)


def collocation_weights(H):
    """Value and gradient weights of the 4 block corners at the block centre."""
    w = np.full(4, 0.25)
    d1 = np.array([-1.0, 1.0, 1.0, -1.0]) / (2.0 * H)
    d2 = np.array([-1.0, -1.0, 1.0, 1.0]) / (2.0 * H)
    return w, np.stack([d1, d2])


def local_matrices(coeffs, H, grad_load=True):
    """(nb, 8, 8) block matrices and (nb, 8) load vectors, local index 2*corner + i."""
    w, D = collocation_weights(H)
    nb = coeffs.B.shape[0]
    # K[p, j, a, i, b]
    K = np.einsum("pji,a,b->pjaib", coeffs.B, w, w)
    K += np.einsum("pjim,a,mb->pjaib", coeffs.Bm, w, D)
    K += np.einsum("pjin,na,b->pjaib", coeffs.Bbar, D, w)
    K += np.einsum("pjimn,na,mb->pjaib", coeffs.Bmn, D, D)
    F = np.einsum("pj,a->pja", coeffs.b, w)
    if grad_load:
        F += np.einsum("pjn,na->pja", coeffs.bgrad, D)
    K = K.transpose(0, 2, 1, 4, 3).reshape(nb, 8, 8)
    F = F.transpose(0, 2, 1).reshape(nb, 8)
    return K, F


def block_corner_nodes(n_coarse):
    bi, bj = np.divmod(np.arange(n_coarse * n_coarse), n_coarse)
    n1 = n_coarse + 1
    return np.stack([bi * n1 + bj, bi * n1 + bj + 1, (bi + 1) * n1 + bj + 1, (bi + 1) * n1 + bj], axis=1)


def assemble_macro(coeffs, n_coarse, grad_load=True):
    if coeffs.B.shape[0] != n_coarse ** 2:
        raise ValueError("coefficients must be given for every coarse block")
    H = 1.0 / n_coarse
    K, F = local_matrices(coeffs, H, grad_load)
    corners = block_corner_nodes(n_coarse)
    dofs = (2 * corners[:, :, None] + np.arange(2)[None, None, :]).reshape(-1, 8)
    ndof = 2 * (n_coarse + 1) ** 2
    rows = np.repeat(dofs, 8, axis=1).reshape(-1)
    cols = np.tile(dofs, (1, 8)).reshape(-1)
    A = sp.coo_matrix((K.reshape(-1), (rows, cols)), shape=(ndof, ndof)).tocsr()
    A.sum_duplicates()
    rhs = np.bincount(dofs.reshape(-1), weights=F.reshape(-1), minlength=ndof)
    n1 = n_coarse + 1
    r, c = np.divmod(np.arange(n1 * n1), n1)
    interior = (r > 0) & (r < n_coarse) & (c > 0) & (c < n_coarse)
    free = np.nonzero(np.repeat(interior, 2))[0]
    return MacroSystem(A=A[free][:, free].tocsr(), rhs=rhs[free], n_coarse=n_coarse, free=free)


def solve_macro(system, tol=1e-10):
    n1 = system.n_coarse + 1
    x = np.zeros(2 * n1 * n1)
    if system.A.shape[0]:
        A = sp.csc_matrix(system.A)
        try:
            sol = spla.splu(A).solve(system.rhs)
        except RuntimeError as exc:
            raise SolverError(f"macroscopic system is singular: {exc}") from exc
        nb = np.linalg.norm(system.rhs)
        rel = np.linalg.norm(A @ sol - system.rhs) / (nb if nb > 0 else 1.0)
        if not np.isfinite(rel) or rel > tol:
            raise SolverError("macroscopic solve did not reach tolerance", rel)
        x[system.free] = sol
    else:
        rel = 0.0
    U = x.reshape(n1, n1, 2).transpose(2, 0, 1).copy()
    return MacroSolution(U=U, residual=float(rel))
