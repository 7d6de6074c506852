"""Independent dense oracles shared by the unit and acceptance tests."""
from fractions import Fraction

import numpy as np
from numpy.polynomial.legendre import leggauss

from multicontinuum.geometry import THICK, THIN, ChannelSpec, UnitCellSpec, rasterize


def tiny_mesh():
    """3x3 coarse blocks of an 8x8 channel cross."""
    spec = UnitCellSpec(8, (ChannelSpec("vertical", 3, 2, THICK), ChannelSpec("horizontal", 3, 2, THIN)))
    return rasterize(spec, Fraction(1, 3))


def dense_stiffness(patch, kappa_fn):
    """Cell-by-cell dense assembly straight from the bilinear shape functions."""
    n = patch.n_free
    A = np.zeros((n, n))
    K = gauss_reference_stiffness()
    x1, x2 = patch.cell_midpoints
    for c, dofs in enumerate(patch.cell_dofs):
        k = kappa_fn(x1[c], x2[c]) if callable(kappa_fn) else kappa_fn
        for a in range(4):
            for b in range(4):
                if dofs[a] >= 0 and dofs[b] >= 0:
                    A[dofs[a], dofs[b]] += k * K[a, b]
    return A


def gauss_reference_stiffness(order=3):
    pts, wts = leggauss(order)
    pts, wts = 0.5 * (pts + 1), 0.5 * wts
    corners = [(0, 0), (1, 0), (1, 1), (0, 1)]
    K = np.zeros((4, 4))
    for x, wx in zip(pts, wts):
        for y, wy in zip(pts, wts):
            g = np.array([((1 if cx else -1) * (y if cy else 1 - y), (1 if cy else -1) * (x if cx else 1 - x))
                          for cx, cy in corners])
            K += wx * wy * g @ g.T
    return K


def gauss_load(patch, f, order=4):
    """Load vector with tensor Gauss quadrature of f times each bilinear shape function."""
    pts, wts = leggauss(order)
    pts, wts = 0.5 * (pts + 1), 0.5 * wts
    h = patch.h
    x1, x2 = patch.cell_midpoints
    out = np.zeros(patch.n_free)
    corners = [(0, 0), (1, 0), (1, 1), (0, 1)]
    for x, wx in zip(pts, wts):
        for y, wy in zip(pts, wts):
            fx = f(x1 - 0.5 * h + x * h, x2 - 0.5 * h + y * h) * wx * wy * h * h
            for a, (cx, cy) in enumerate(corners):
                N = (x if cx else 1 - x) * (y if cy else 1 - y)
                d = patch.cell_dofs[:, a]
                np.add.at(out, d[d >= 0], (fx * N)[d >= 0])
    return out


def dense_kkt_solve(A, C, g):
    """Solve [A -C^T; C 0][phi; lam] = [0; g] with a dense LU of the full saddle matrix."""
    n, m = A.shape[0], C.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = A
    K[:n, n:] = -C.T
    K[n:, :n] = C
    rhs = np.zeros((n + m,) + g.shape[1:])
    rhs[n:] = g
    sol = np.linalg.solve(K, rhs)
    return sol[:n], sol[n:]
