"""Constrained cell problems on oversampled regions.

For a coarse block p and ``l`` oversampling layers, six local fields are
computed on K_{p,l}: phi_i fixes the continuum averages to delta_ij in every
block of the region, phi_i^m fixes them to the continuum averages of the
linear function x_m - c_mj.  All six share one saddle factorization.
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .fem import SaddleSolver, SolverError, assemble_constraints, assemble_stiffness, sample
from .geometry import CONTINUA, OversampleRegion, centered_offset, oversample_region

# column layout of CellBasisSet.fields
AVG = {1: 0, 2: 1}
GRAD = {(1, 1): 2, (1, 2): 3, (2, 1): 4, (2, 2): 5}
FIELD_NAMES = ("phi1", "phi2", "phi1_1", "phi1_2", "phi2_1", "phi2_2")


class CellProblemError(RuntimeError):
    pass


@dataclass
class CellBasisSet:
    p: int
    l: int
    region: OversampleRegion = field(repr=False)
    fields: np.ndarray = field(repr=False)  # (n_free, 6), see FIELD_NAMES
    keys: list = field(repr=False)  # constraint rows (j, q)
    rhs: np.ndarray = field(repr=False)  # (rows, 6) imposed values
    beta: np.ndarray = field(repr=False)  # (rows, 6) scaled multipliers
    c: np.ndarray = field(repr=False)  # c[m-1, j-1]
    residual: float = 0.0  # max relative constraint residual

    def phi(self, i):
        return self.fields[:, AVG[i]]

    def phi_grad(self, i, m):
        return self.fields[:, GRAD[i, m]]

    @property
    def beta_avg(self):
        return self.beta[:, :2]

    @property
    def beta_grad(self):
        return self.beta[:, 2:]


def _first_moments(patch, constraints, nrows, c, per_block_center):
    """Rows x 2 x 2 array of int_{K_q}(x_m - c_mj) psi_j for each (j, q) row."""
    h2 = patch.h ** 2
    x1, x2 = patch.cell_midpoints
    rows = constraints.cell_rows
    sel = rows >= 0
    out = np.zeros((nrows, 2))
    for m, xm in ((1, x1), (2, x2)):
        mom = np.bincount(rows[sel], weights=xm[sel] * h2, minlength=nrows)
        if per_block_center:
            out[:, m - 1] = mom - constraints.measures * (mom / constraints.measures)
        else:
            cj = np.array([c[m - 1, j - 1] for j, _ in constraints.keys])
            out[:, m - 1] = mom - cj * constraints.measures
    return out


def constraint_targets(patch, constraints, c, center="anchored"):
    """(rows, 6) right-hand sides for the six cell problems."""
    nrows = len(constraints.keys)
    g = np.zeros((nrows, 6))
    row_j = np.array([j for j, _ in constraints.keys], dtype=int)
    moments = _first_moments(patch, constraints, nrows, c, center == "per_block")
    for i in CONTINUA:
        own = row_j == i
        g[own, AVG[i]] = constraints.measures[own]
        for m in (1, 2):
            g[own, GRAD[i, m]] = moments[own, m - 1]
    return g


def solve_cell_problems(mesh, kappa, p, l, center="anchored"):
    """Both families of cell problems for block ``p``.

    ``center="anchored"`` uses the centroids c_mj of the central block for
    every block of the region; ``"per_block"`` recentres in each block, which
    makes the gradient targets vanish.
    """
    if center not in ("anchored", "per_block"):
        raise ValueError(f"unknown centering {center!r}")
    region = oversample_region(mesh, p, l)
    patch = region.patch
    c = np.array([[centered_offset(mesh, p, j, m) for j in CONTINUA] for m in (1, 2)])
    A = assemble_stiffness(patch, kappa)
    constraints = assemble_constraints(patch, region.coarse_blocks)
    try:
        solver = SaddleSolver(A, constraints)
        g = constraint_targets(patch, constraints, c, center)
        sol = solver.solve(g)
    except SolverError as exc:
        raise CellProblemError(f"cell problem failed for block {p}, l={l}: {exc}") from exc
    residual = float(np.max(_relative_residuals(constraints, sol.phi, g, float(mesh.eps)), initial=0.0))
    return CellBasisSet(
        p=p, l=l, region=region, fields=sol.phi, keys=list(constraints.keys),
        rhs=g, beta=sol.beta, c=c, residual=residual,
    )


def _relative_residuals(constraints, fields, g, eps):
    # natural magnitudes: measure for average rows, eps * measure for moment rows
    scale = np.empty_like(g)
    scale[:, :2] = constraints.measures[:, None]
    scale[:, 2:] = eps * constraints.measures[:, None]
    return np.abs(constraints.C @ fields - g) / scale


def constraint_residuals(basis):
    """(rows, 6) constraint residuals relative to the natural row magnitude."""
    patch = basis.region.patch
    constraints = assemble_constraints(patch, basis.region.coarse_blocks)
    return _relative_residuals(constraints, basis.fields, basis.rhs, float(patch.mesh.eps))


def _block_distance(basis):
    mesh = basis.region.patch.mesh
    bi, bj = mesh.block_rc(basis.p)
    cb = basis.region.patch.cell_block
    return np.maximum(np.abs(cb // mesh.n_coarse - bi), np.abs(cb % mesh.n_coarse - bj))


def layer_energies(basis, kappa):
    """Energy of each field in the central block and in the outermost layer.

    Returns (central, outer) arrays of length 6.
    """
    patch = basis.region.patch
    dist = _block_distance(basis)
    vals = patch.corner_values(basis.fields)
    k = sample(kappa, *patch.cell_midpoints)
    out = []
    for mask in (dist == 0, dist == basis.l):
        g = kernels.energy_gram(vals[mask], k[mask])
        out.append(np.diag(g).copy())
    return out[0], out[1]


def restrict_to_block(basis, target):
    """Corner values of ``basis`` on the cells of ``target``'s central block.

    Both sets must belong to the same block p; ``target`` is usually the one
    with fewer layers.  Returns an array shaped like target's central cells.
    """
    if basis.p != target.p:
        raise ValueError("basis sets belong to different blocks")
    mesh = basis.region.patch.mesh
    out = []
    for b in (basis, target):
        patch = b.region.patch
        mask = patch.cell_block == b.p
        r, c = patch.cells
        key = (patch.row0 + r[mask]) * mesh.n_cells + patch.col0 + c[mask]
        order = np.argsort(key)
        out.append(patch.corner_values(b.fields)[mask][order])
    return out[0], out[1]


def localization_error(coarse, fine, kappa):
    """Relative energy, on the central block, of coarse-minus-fine fields per column.

    ``fine`` is the reference with more layers.
    """
    a, b = restrict_to_block(fine, coarse)
    patch = coarse.region.patch
    mask = patch.cell_block == coarse.p
    r, c = patch.cells
    key = np.argsort((patch.row0 + r[mask]) * patch.mesh.n_cells + patch.col0 + c[mask])
    x1, x2 = patch.cell_midpoints
    k = sample(kappa, x1[mask][key], x2[mask][key])
    num = np.diag(kernels.energy_gram(b - a, k))
    den = np.diag(kernels.energy_gram(a, k))
    return np.sqrt(num / np.where(den > 0, den, 1.0))
