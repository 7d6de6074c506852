"""Periodic channel structures rasterized onto a structured fine grid.

Conventions used throughout the package: the domain is [0, 1]^2, fine cell
(r, c) covers x1 in [c h, (c+1) h] and x2 in [r h, (r+1) h], fine node (r, c)
sits at (c h, r h), and coarse block p = bi * n_coarse + bj covers fine rows
bi*n_fine ... and fine columns bj*n_fine ...
"""
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

import numpy as np
from scipy import ndimage

SOLID = 0
THICK = 1
THIN = 2
CONTINUA = (THICK, THIN)


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelSpec:
    axis: str  # "horizontal" or "vertical"
    offset: int
    width: int
    continuum: int

    def validate(self, n_fine):
        if self.axis not in ("horizontal", "vertical"):
            raise GeometryError(f"unknown channel axis {self.axis!r}")
        if self.continuum not in CONTINUA:
            raise GeometryError(f"continuum must be 1 or 2, got {self.continuum}")
        if not (1 <= self.width <= n_fine and self.offset >= 0 and self.offset + self.width <= n_fine):
            raise GeometryError(f"channel {self} does not fit in a {n_fine}-cell unit cell")


@dataclass(frozen=True)
class UnitCellSpec:
    n_fine: int
    channels: tuple

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        for ch in self.channels:
            ch.validate(self.n_fine)
        present = {ch.continuum for ch in self.channels}
        if present != set(CONTINUA):
            raise GeometryError("a unit cell needs at least one channel of each continuum")

    def labels(self):
        """(n_fine, n_fine) int8 labels; thin channels first so thick ones win overlaps."""
        lab = np.zeros((self.n_fine, self.n_fine), dtype=np.int8)
        for cont in (THIN, THICK):
            for ch in self.channels:
                if ch.continuum != cont:
                    continue
                sl = slice(ch.offset, ch.offset + ch.width)
                if ch.axis == "vertical":
                    lab[:, sl] = cont
                else:
                    lab[sl, :] = cont
        return lab


def build_structure(structure_id, n_fine=80, thick=10, thin=2):
    """Channel cross used as the periodic unit cell.

    Structure 1 is one thick vertical channel crossed by one thin horizontal
    channel, both centred.  Structure 2 adds thin channels along the quarter
    lines in both directions.  Widths are in fine cells.
    """
    if structure_id not in (1, 2):
        raise GeometryError(f"unknown structure id {structure_id!r}")
    if n_fine < 20 or n_fine % 4:
        raise GeometryError(f"n_fine must be >= 20 and divisible by 4, got {n_fine}")
    channels = [
        ChannelSpec("vertical", (n_fine - thick) // 2, thick, THICK),
        ChannelSpec("horizontal", (n_fine - thin) // 2, thin, THIN),
    ]
    if structure_id == 2:
        for off in (n_fine // 4 - thin // 2, 3 * n_fine // 4 - thin // 2):
            channels.append(ChannelSpec("vertical", off, thin, THIN))
            channels.append(ChannelSpec("horizontal", off, thin, THIN))
    return UnitCellSpec(n_fine, tuple(channels))


def node_masks(labels):
    """Active and Dirichlet node flags for a label window.

    Nodes on the window boundary count as touching a solid cell, so a window
    always carries homogeneous Dirichlet data on its outer edge.
    """
    padded = np.pad(labels != SOLID, 1, constant_values=False)
    # the four cells around node (r, c) are padded[r:r+2, c:c+2]
    a, b = padded[:-1, :-1], padded[:-1, 1:]
    c, d = padded[1:, :-1], padded[1:, 1:]
    active = a | b | c | d
    touches_solid = ~(a & b & c & d)
    return active, active & touches_solid


class Patch:
    """A rectangular window of fine cells with its free-node numbering.

    ``row0``/``col0`` locate the window in global fine-cell indices.  All
    per-cell arrays below refer to the window's non-solid cells in row-major
    order, which fixes the assembly order.
    """

    def __init__(self, mesh, row0, col0, nrows, ncols):
        self.mesh = mesh
        self.row0, self.col0 = int(row0), int(col0)
        self.nrows, self.ncols = int(nrows), int(ncols)
        self.labels = mesh.labels[row0:row0 + nrows, col0:col0 + ncols]
        self.h = mesh.h
        active, dirichlet = node_masks(self.labels)
        self.node_active = active
        self.node_dirichlet = dirichlet
        free = active & ~dirichlet
        self.node_index = np.full(free.shape, -1, dtype=np.int64)
        self.n_free = int(free.sum())
        self.node_index[free] = np.arange(self.n_free, dtype=np.int64)

    @cached_property
    def cells(self):
        """(rows, cols) local indices of non-solid cells."""
        r, c = np.nonzero(self.labels != SOLID)
        return r.astype(np.int64), c.astype(np.int64)

    @cached_property
    def cell_dofs(self):
        r, c = self.cells
        idx = self.node_index
        return np.stack([idx[r, c], idx[r, c + 1], idx[r + 1, c + 1], idx[r + 1, c]], axis=1)

    @cached_property
    def cell_labels(self):
        r, c = self.cells
        return self.labels[r, c].astype(np.int64)

    @cached_property
    def cell_midpoints(self):
        r, c = self.cells
        h = self.h
        return (self.col0 + c + 0.5) * h, (self.row0 + r + 0.5) * h

    @cached_property
    def cell_block(self):
        """Global coarse block index of each non-solid cell."""
        r, c = self.cells
        nf = self.mesh.n_fine
        return ((self.row0 + r) // nf) * self.mesh.n_coarse + (self.col0 + c) // nf

    @cached_property
    def free_coords(self):
        rr, cc = np.nonzero(self.node_index >= 0)
        order = np.argsort(self.node_index[rr, cc])
        return (self.col0 + cc[order]) * self.h, (self.row0 + rr[order]) * self.h

    def corner_values(self, u):
        """Corner values per non-solid cell, zero at Dirichlet nodes.

        ``u`` is (n_free,) or (n_free, k); the result is (ncells, 4) or (ncells, 4, k).
        """
        u = np.asarray(u, dtype=np.float64)
        ext = np.concatenate([u, np.zeros((1,) + u.shape[1:])])
        return ext[self.cell_dofs]  # dof -1 picks the appended zero row

    def cells_in_block(self, q, j=None):
        mask = self.cell_block == q
        if j is not None:
            mask &= self.cell_labels == j
        return mask


@dataclass(frozen=True)
class PerforatedMesh:
    eps: Fraction
    n_fine: int
    labels: np.ndarray = field(repr=False)
    structure: UnitCellSpec = field(repr=False, default=None)
    structure_id: int = None

    @property
    def n_coarse(self):
        return int(1 / self.eps)

    @property
    def n_cells(self):
        return self.n_coarse * self.n_fine

    @property
    def h(self):
        return 1.0 / self.n_cells

    @property
    def n_blocks(self):
        return self.n_coarse ** 2

    @cached_property
    def patch(self):
        return Patch(self, 0, 0, self.n_cells, self.n_cells)

    @property
    def node_active(self):
        return self.patch.node_active

    @property
    def node_dirichlet(self):
        return self.patch.node_dirichlet

    def coarse_of(self, row, col):
        return (np.asarray(row) // self.n_fine) * self.n_coarse + np.asarray(col) // self.n_fine

    def block_rc(self, p):
        if not 0 <= p < self.n_blocks:
            raise IndexError(f"coarse block {p} out of range")
        return divmod(int(p), self.n_coarse)

    def block_labels(self, p):
        bi, bj = self.block_rc(p)
        nf = self.n_fine
        return self.labels[bi * nf:(bi + 1) * nf, bj * nf:(bj + 1) * nf]

    def block_center(self, p):
        bi, bj = self.block_rc(p)
        H = 1.0 / self.n_coarse
        return (bj + 0.5) * H, (bi + 0.5) * H

    def block_distance_to_boundary(self, p):
        """Number of whole coarse blocks between p and the nearest edge of the domain."""
        bi, bj = self.block_rc(p)
        n = self.n_coarse
        return min(bi, bj, n - 1 - bi, n - 1 - bj)


def _as_eps(eps):
    eps = Fraction(eps).limit_denominator(10**6) if not isinstance(eps, Fraction) else eps
    if eps <= 0 or eps.numerator != 1:
        raise GeometryError(f"1/eps must be a positive integer, got eps={eps}")
    return eps


def rasterize(spec, eps, n_fine=None, structure_id=None):
    eps = _as_eps(eps)
    n_fine = spec.n_fine if n_fine is None else n_fine
    if n_fine != spec.n_fine:
        raise GeometryError(f"unit cell has {spec.n_fine} cells per side, requested {n_fine}")
    n_coarse = eps.denominator
    labels = np.tile(spec.labels(), (n_coarse, n_coarse))
    _, ncomp = ndimage.label(labels != SOLID)
    if ncomp != 1:
        raise GeometryError(f"active region has {ncomp} disconnected components")
    labels.setflags(write=False)
    return PerforatedMesh(eps=eps, n_fine=n_fine, labels=labels, structure=spec, structure_id=structure_id)


def build_mesh(structure_id, eps, n_fine=80):
    return rasterize(build_structure(structure_id, n_fine), eps, n_fine, structure_id=structure_id)


def continuum_measure(mesh, q, j):
    return float(np.count_nonzero(mesh.block_labels(q) == j)) * mesh.h ** 2


def centered_offset(mesh, p, j, m):
    """Centroid coordinate x_m of continuum j inside block p (midpoint rule)."""
    lab = mesh.block_labels(p)
    r, c = np.nonzero(lab == j)
    if r.size == 0:
        raise GeometryError(f"continuum {j} is empty in block {p}")
    bi, bj = mesh.block_rc(p)
    if m == 1:
        coords = (bj * mesh.n_fine + c + 0.5) * mesh.h
    elif m == 2:
        coords = (bi * mesh.n_fine + r + 0.5) * mesh.h
    else:
        raise ValueError(f"direction must be 1 or 2, got {m}")
    return float(coords.mean())


@dataclass
class OversampleRegion:
    p: int
    l: int
    block_rows: range
    block_cols: range
    patch: Patch = field(repr=False)

    @property
    def coarse_blocks(self):
        n = self.patch.mesh.n_coarse
        return [bi * n + bj for bi in self.block_rows for bj in self.block_cols]

    @property
    def local_node_map(self):
        return self.patch.node_index

    @property
    def local_dirichlet(self):
        return self.patch.node_dirichlet


def oversample_region(mesh, p, l):
    """K_p grown by ``l`` coarse layers (Chebyshev distance), clipped to the domain."""
    if l < 0:
        raise ValueError("layer count must be non-negative")
    bi, bj = mesh.block_rc(p)
    n, nf = mesh.n_coarse, mesh.n_fine
    rows = range(max(bi - l, 0), min(bi + l, n - 1) + 1)
    cols = range(max(bj - l, 0), min(bj + l, n - 1) + 1)
    patch = Patch(mesh, rows.start * nf, cols.start * nf, len(rows) * nf, len(cols) * nf)
    return OversampleRegion(p=int(p), l=int(l), block_rows=rows, block_cols=cols, patch=patch)
