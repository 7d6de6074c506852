"""Q1 assembly on perforated patches, SPD solves and constrained (saddle) solves."""
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels


class SolverError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message if residual is None else f"{message} (relative residual {residual:.3e})")
        self.residual = residual


class RankDeficiencyError(SolverError):
    def __init__(self, rows):
        self.rows = list(rows)
        super().__init__(f"constraint rows are linearly dependent: {self.rows}")


def sample(fn, x1, x2):
    """Evaluate a coefficient given as a scalar or a vectorized callable."""
    if callable(fn):
        return np.broadcast_to(np.asarray(fn(x1, x2), dtype=np.float64), np.shape(x1)).copy()
    return np.full(np.shape(x1), float(fn))


def assemble_stiffness(patch, kappa):
    """Dirichlet-eliminated stiffness; kappa sampled at cell midpoints."""
    x1, x2 = patch.cell_midpoints
    rows, cols, vals = kernels.stiffness_triplets(patch.cell_dofs, sample(kappa, x1, x2))
    n = patch.n_free
    A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    return A


def assemble_load(patch, f):
    """Load vector: f(midpoint) * h^2 / 4 to each free corner."""
    x1, x2 = patch.cell_midpoints
    w = sample(f, x1, x2) * (patch.h ** 2 / 4.0)
    return kernels.scatter_corners(patch.cell_dofs, w, patch.n_free)


@dataclass
class ConstraintBlock:
    """Rows are (continuum j, coarse block q); entry (row, n) = int_{K_q} psi_j v_n."""

    C: sp.csr_matrix
    keys: list
    measures: np.ndarray
    cell_rows: np.ndarray = None  # constraint row of each patch cell, -1 if none
    row_index: dict = field(default_factory=dict)

    def __post_init__(self):
        self.row_index = {key: k for k, key in enumerate(self.keys)}


def assemble_constraints(patch, blocks, continua=(1, 2)):
    """Continuum-mass rows for every non-empty (j, q) with q in ``blocks``."""
    h2 = patch.h ** 2
    keys, measures = [], []
    row_of_cell = np.full(len(patch.cell_labels), -1, dtype=np.int64)
    for q in blocks:
        in_q = patch.cell_block == q
        for j in continua:
            mask = in_q & (patch.cell_labels == j)
            count = int(np.count_nonzero(mask))
            if count == 0:
                continue
            row_of_cell[mask] = len(keys)
            keys.append((j, q))
            measures.append(count * h2)
    cells = np.nonzero(row_of_cell >= 0)[0]
    dofs = patch.cell_dofs[cells]
    rows = np.repeat(row_of_cell[cells], 4)
    cols = dofs.reshape(-1)
    keep = cols >= 0
    vals = np.full(keep.sum(), h2 / 4.0)
    C = sp.coo_matrix((vals, (rows[keep], cols[keep])), shape=(len(keys), patch.n_free)).tocsr()
    C.sum_duplicates()
    return ConstraintBlock(C=C, keys=keys, measures=np.asarray(measures), cell_rows=row_of_cell)


class SPDSolver:
    """Sparse symmetric factorization reused across right-hand sides."""

    def __init__(self, A, tol=1e-10):
        self.A = sp.csc_matrix(A)
        self.tol = tol
        if self.A.shape[0] == 0:
            raise SolverError("empty system")
        try:
            self.lu = spla.splu(
                self.A,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as exc:  # exactly singular
            raise SolverError(f"factorization failed: {exc}") from exc

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=np.float64)
        x = self.lu.solve(rhs)
        _check_residual(self.A, x, rhs, self.tol)
        return x


def _check_residual(A, x, rhs, tol):
    r = A @ x - rhs
    nr = np.linalg.norm(rhs, axis=0)
    nres = np.linalg.norm(r, axis=0)
    scale = np.where(nr > 0, nr, 1.0)
    rel = np.max(np.atleast_1d(nres / scale))
    if not np.isfinite(rel) or rel > tol:
        raise SolverError("SPD solve did not reach tolerance", rel)
    return rel


def solve_spd(A, rhs, method="direct", tol=1e-10, maxiter=20000):
    """Solve A x = rhs for SPD A.

    ``method`` is ``"direct"`` (sparse factorization) or ``"cg"`` (conjugate
    gradients with Jacobi preconditioning).
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    if not np.any(rhs):
        return np.zeros_like(rhs)
    if method == "direct":
        return SPDSolver(A, tol).solve(rhs)
    if method != "cg":
        raise ValueError(f"unknown method {method!r}")
    A = sp.csr_matrix(A)
    dinv = 1.0 / A.diagonal()
    M = spla.LinearOperator(A.shape, matvec=lambda v: dinv * v, dtype=np.float64)
    # iterate a bit past the target so the true residual check passes
    x, info = spla.cg(A, rhs, rtol=0.1 * tol, atol=0.0, maxiter=maxiter, M=M)
    if info != 0:
        rel = np.linalg.norm(A @ x - rhs) / np.linalg.norm(rhs)
        raise SolverError(f"CG stopped after {maxiter} iterations", rel)
    _check_residual(A, x, rhs, tol)
    return x


@dataclass
class SaddleSolution:
    phi: np.ndarray  # (n_free,) or (n_free, k)
    lam: np.ndarray  # unscaled multipliers, A phi = C^T lam
    beta: np.ndarray  # lam * continuum measure per row


class SaddleSolver:
    """Minimize 1/2 phi^T A phi subject to C phi = g via the Schur complement.

    The optimality system is A phi - C^T lam = 0, C phi = g.  A is factored
    once; S = C A^{-1} C^T is small and dense.
    """

    def __init__(self, A, constraints, tol=1e-9, spd_solver=None):
        self.constraints = constraints
        self.tol = tol
        C = constraints.C
        m = C.shape[0]
        self.spd = spd_solver or SPDSolver(A)
        self.A = self.spd.A
        Ct = C.T.toarray()
        self.Y = self.spd.solve(Ct) if m else np.zeros((A.shape[0], 0))
        S = C @ self.Y
        self.S = 0.5 * (S + S.T)
        self._check_rank()
        self.cho = scipy.linalg.cho_factor(self.S) if m else None

    def _check_rank(self):
        S = self.S
        if S.shape[0] == 0:
            return
        d = np.sqrt(np.diag(S))
        if np.any(d == 0):
            raise RankDeficiencyError([self.constraints.keys[k] for k in np.nonzero(d == 0)[0]])
        # scale to unit diagonal before judging conditioning
        Sn = S / np.outer(d, d)
        w = np.linalg.eigvalsh(Sn)
        if w[0] <= 1e-12 * w[-1]:
            _, R, piv = scipy.linalg.qr(Sn, pivoting=True)
            small = np.abs(np.diag(R)) <= 1e-10 * abs(R[0, 0])
            raise RankDeficiencyError([self.constraints.keys[k] for k in piv[small]])

    def solve(self, g):
        g = np.asarray(g, dtype=np.float64)
        if self.cho is None:
            lam = np.zeros_like(g)
        else:
            lam = scipy.linalg.cho_solve(self.cho, g)
        phi = self.Y @ lam
        self._verify(phi, lam, g)
        beta = lam * (self.constraints.measures if g.ndim == 1 else self.constraints.measures[:, None])
        return SaddleSolution(phi=phi, lam=lam, beta=beta)

    def _verify(self, phi, lam, g):
        C = self.constraints.C
        g2 = g.reshape(len(g), -1)
        r = (C @ phi).reshape(g2.shape) - g2
        gn = np.linalg.norm(g2, axis=0)
        bad = np.linalg.norm(r, axis=0) > self.tol * np.where(gn > 0, gn, 1.0)
        if np.any(bad):
            raise SolverError("constraint residual above tolerance",
                              float(np.max(np.linalg.norm(r, axis=0) / np.where(gn > 0, gn, 1.0))))
        stat = self.A @ phi - C.T @ lam
        an = np.linalg.norm((self.A @ phi).reshape(len(phi), -1), axis=0)
        sn = np.linalg.norm(stat.reshape(len(phi), -1), axis=0)
        if np.any(sn > self.tol * np.where(an > 0, an, 1.0)):
            raise SolverError("stationarity residual above tolerance")


def solve_saddle(A, constraints, g, tol=1e-9):
    """One-shot constrained minimization; see :class:`SaddleSolver`."""
    return SaddleSolver(A, constraints, tol=tol).solve(g)
