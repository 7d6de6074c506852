"""Piecewise-constant macroscopic coefficients from the cell basis fields."""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .cell_problems import AVG, GRAD, solve_cell_problems
from .fem import sample


@dataclass
class BlockCoefficients:
    """Extensive coefficients of one coarse block (continuum/direction indices 0-based).

    B[j, i] = a_p(phi_i, phi_j), Bm[j, i, m] = a_p(phi_i^m, phi_j),
    Bbar[j, i, n] = a_p(phi_i, phi_j^n), Bmn[j, i, m, n] = a_p(phi_i^m, phi_j^n),
    b[j] = (f, phi_j)_p and bgrad[j, n] = (f, phi_j^n)_p.
    """

    p: int
    B: np.ndarray
    Bm: np.ndarray
    Bbar: np.ndarray
    Bmn: np.ndarray
    b: np.ndarray
    bgrad: np.ndarray
    residual: float = 0.0
    beta: np.ndarray = field(default=None, repr=False)


def coefficients_from_gram(p, gram, loads, residual=0.0, beta=None):
    B = np.empty((2, 2))
    Bm = np.empty((2, 2, 2))
    Bbar = np.empty((2, 2, 2))
    Bmn = np.empty((2, 2, 2, 2))
    b = np.empty(2)
    bgrad = np.empty((2, 2))
    for j in (1, 2):
        b[j - 1] = loads[AVG[j]]
        for n in (1, 2):
            bgrad[j - 1, n - 1] = loads[GRAD[j, n]]
        for i in (1, 2):
            B[j - 1, i - 1] = gram[AVG[i], AVG[j]]
            for m in (1, 2):
                Bm[j - 1, i - 1, m - 1] = gram[GRAD[i, m], AVG[j]]
                Bbar[j - 1, i - 1, m - 1] = gram[AVG[i], GRAD[j, m]]
                for n in (1, 2):
                    Bmn[j - 1, i - 1, m - 1, n - 1] = gram[GRAD[i, m], GRAD[j, n]]
    return BlockCoefficients(p=p, B=B, Bm=Bm, Bbar=Bbar, Bmn=Bmn, b=b, bgrad=bgrad,
                             residual=residual, beta=beta)


def compute_coefficients(mesh, kappa, f, basis):
    """Energy and load inner products restricted to the central block K_p."""
    patch = basis.region.patch
    mask = patch.cell_block == basis.p
    vals = patch.corner_values(basis.fields)[mask]  # (nc, 4, 6)
    x1, x2 = patch.cell_midpoints
    k = sample(kappa, x1[mask], x2[mask])
    gram = kernels.energy_gram(vals, k)
    w = sample(f, x1[mask], x2[mask]) * patch.h ** 2
    loads = np.einsum("c,cs->s", w, vals.mean(axis=1))
    return coefficients_from_gram(basis.p, gram, loads, basis.residual, basis.beta)


def block_coefficients(mesh, kappa, f, p, l, center="anchored"):
    basis = solve_cell_problems(mesh, kappa, p, l, center=center)
    return compute_coefficients(mesh, kappa, f, basis)


@dataclass
class EffectiveCoefficients:
    """Stacked per-block coefficients, first axis = coarse block index."""

    eps: float
    B: np.ndarray
    Bm: np.ndarray
    Bbar: np.ndarray
    Bmn: np.ndarray
    b: np.ndarray
    bgrad: np.ndarray
    residual: np.ndarray
    blocks: np.ndarray = None

    @property
    def n_blocks(self):
        return self.B.shape[0]

    @property
    def block_area(self):
        return self.eps ** 2

    @classmethod
    def stack(cls, eps, blocks):
        blocks = sorted(blocks, key=lambda c: c.p)
        return cls(
            eps=float(eps),
            B=np.stack([c.B for c in blocks]),
            Bm=np.stack([c.Bm for c in blocks]),
            Bbar=np.stack([c.Bbar for c in blocks]),
            Bmn=np.stack([c.Bmn for c in blocks]),
            b=np.stack([c.b for c in blocks]),
            bgrad=np.stack([c.bgrad for c in blocks]),
            residual=np.array([c.residual for c in blocks]),
            blocks=np.array([c.p for c in blocks]),
        )

    def scaled_load(self, alpha):
        return EffectiveCoefficients(self.eps, self.B, self.Bm, self.Bbar, self.Bmn,
                                     alpha * self.b, alpha * self.bgrad, self.residual, self.blocks)


_WORKER = {}


def _init_worker(mesh, kappa, f):
    _WORKER.update(mesh=mesh, kappa=kappa, f=f)


def _block_task(args):
    p, l, center = args
    return block_coefficients(_WORKER["mesh"], _WORKER["kappa"], _WORKER["f"], p, l, center)


def upscale(mesh, kappa, f, l, center="anchored", workers=1, blocks=None):
    """Coefficients for every coarse block (or the listed ``blocks``).

    With ``workers > 1`` blocks are farmed out to processes; the mesh is
    shipped once per worker and results are collected in block order.
    """
    blocks = range(mesh.n_blocks) if blocks is None else blocks
    tasks = [(p, l, center) for p in blocks]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(mesh, kappa, f)) as pool:
            results = list(pool.map(_block_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        results = [block_coefficients(mesh, kappa, f, p, l, center) for p, l, center in tasks]
    return EffectiveCoefficients.stack(mesh.eps, results)
