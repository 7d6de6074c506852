"""Fine-grid reference solution on the whole perforated domain."""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .fem import assemble_load, assemble_stiffness, solve_spd
from .geometry import CONTINUA, GeometryError, PerforatedMesh


@dataclass
class ReferenceSolution:
    u: np.ndarray = field(repr=False)  # values at the mesh's free nodes
    mesh: PerforatedMesh = field(repr=False)
    kappa: object = None
    f: object = None

    def nodal_grid(self):
        """Full (N+1, N+1) nodal array with zeros at Dirichlet and inactive nodes."""
        idx = self.mesh.patch.node_index
        out = np.zeros(idx.shape)
        free = idx >= 0
        out[free] = self.u[idx[free]]
        return out


def solve_reference(mesh, kappa, f, method="direct"):
    patch = mesh.patch
    A = assemble_stiffness(patch, kappa)
    b = assemble_load(patch, f)
    u = solve_spd(A, b, method=method)
    return ReferenceSolution(u=u, mesh=mesh, kappa=kappa, f=f)


def block_continuum_integrals(patch, u, n_blocks):
    """(2, n_blocks) integrals of u over each continuum in each coarse block (Q1-consistent)."""
    h2 = patch.h ** 2
    vals = patch.corner_values(u)
    out = np.zeros((len(CONTINUA), n_blocks))
    for k, j in enumerate(CONTINUA):
        group = np.where(patch.cell_labels == j, patch.cell_block, -1)
        out[k] = kernels.group_corner_integrals(vals, np.full(len(group), h2), group, n_blocks)
    return out


def block_continuum_measures(mesh):
    """(2, n_blocks) continuum areas per coarse block."""
    nf, n = mesh.n_fine, mesh.n_coarse
    lab = mesh.labels.reshape(n, nf, n, nf)
    return np.stack([(lab == j).sum(axis=(1, 3)).reshape(-1) for j in CONTINUA]) * mesh.h ** 2


def continuum_averages(sol):
    """(2, n_blocks) continuum averages; NaN where a continuum is absent."""
    mesh = sol.mesh
    ints = block_continuum_integrals(mesh.patch, sol.u, mesh.n_blocks)
    meas = block_continuum_measures(mesh)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(meas > 0, ints / np.where(meas > 0, meas, 1.0), np.nan)


def cell_continuum_average(sol, p, i):
    mesh = sol.mesh
    patch = mesh.patch
    mask = patch.cells_in_block(p, i)
    n = int(np.count_nonzero(mask))
    if n == 0:
        raise GeometryError(f"continuum {i} is empty in block {p}")
    vals = patch.corner_values(sol.u)[mask]
    return float(vals.mean(axis=1).sum() / n)
