"""Cell-loop kernels for bilinear (Q1) elements on a uniform square grid.

Every kernel has a numba implementation (``_nb_*``) and a pure-numpy
implementation (``_np_*``).  The public names are bound at import time:
numba is used when importable unless ``MULTICONTINUUM_BACKEND=numpy``.

Local corner order of a fine cell with lower-left node (r, c) is
0 = (r, c), 1 = (r, c+1), 2 = (r+1, c+1), 3 = (r+1, c) (counterclockwise).
A corner dof of -1 marks a Dirichlet (eliminated) node.
"""
import os

import numpy as np

# Stiffness of the unit square for -Laplace; independent of cell size in 2D.
Q1_STIFFNESS = np.array(
    [
        [4.0, -1.0, -2.0, -1.0],
        [-1.0, 4.0, -1.0, -2.0],
        [-2.0, -1.0, 4.0, -1.0],
        [-1.0, -2.0, -1.0, 4.0],
    ]
) / 6.0

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def _requested_backend():
    name = os.environ.get("MULTICONTINUUM_BACKEND", "numba").strip().lower()
    if name not in ("numba", "numpy"):
        raise ValueError(f"MULTICONTINUUM_BACKEND must be 'numba' or 'numpy', got {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        return "numpy"
    return name


# ---------------------------------------------------------------- numpy path


def _np_stiffness_triplets(dofs, kappa):
    rows = np.repeat(dofs, 4, axis=1).reshape(-1)
    cols = np.tile(dofs, (1, 4)).reshape(-1)
    vals = (kappa[:, None, None] * Q1_STIFFNESS[None, :, :]).reshape(-1)
    keep = (rows >= 0) & (cols >= 0)
    return rows[keep].astype(np.int64), cols[keep].astype(np.int64), vals[keep]


def _np_scatter_corners(dofs, weights, n):
    flat = dofs.reshape(-1)
    w = np.repeat(weights, 4)
    keep = flat >= 0
    return np.bincount(flat[keep], weights=w[keep], minlength=n).astype(np.float64)


def _np_energy_gram(corner_vals, kappa):
    # corner_vals: (nc, 4, k)
    ku = np.einsum("ab,cbt->cat", Q1_STIFFNESS, corner_vals)
    gram = np.einsum("c,cas,cat->st", kappa, corner_vals, ku)
    upper = np.triu(gram)
    return upper + np.triu(upper, 1).T


def _np_group_corner_integrals(corner_vals, weights, group, ngroups):
    means = corner_vals.mean(axis=1)
    keep = group >= 0
    return np.bincount(group[keep], weights=(weights * means)[keep], minlength=ngroups)


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _nb_stiffness_triplets(dofs, kappa):
        nc = dofs.shape[0]
        count = 0
        for c in range(nc):
            nfree = 0
            for a in range(4):
                if dofs[c, a] >= 0:
                    nfree += 1
            count += nfree * nfree
        rows = np.empty(count, dtype=np.int64)
        cols = np.empty(count, dtype=np.int64)
        vals = np.empty(count, dtype=np.float64)
        k = 0
        for c in range(nc):
            for a in range(4):
                da = dofs[c, a]
                if da < 0:
                    continue
                for b in range(4):
                    db = dofs[c, b]
                    if db < 0:
                        continue
                    rows[k] = da
                    cols[k] = db
                    vals[k] = kappa[c] * Q1_STIFFNESS[a, b]
                    k += 1
        return rows, cols, vals

    @numba.njit(cache=True)
    def _nb_scatter_corners(dofs, weights, n):
        out = np.zeros(n, dtype=np.float64)
        for c in range(dofs.shape[0]):
            w = weights[c]
            for a in range(4):
                d = dofs[c, a]
                if d >= 0:
                    out[d] += w
        return out

    @numba.njit(cache=True)
    def _nb_energy_gram(corner_vals, kappa):
        nc, _, nf = corner_vals.shape
        gram = np.zeros((nf, nf), dtype=np.float64)
        ku = np.empty((4, nf), dtype=np.float64)
        for c in range(nc):
            for a in range(4):
                for t in range(nf):
                    acc = 0.0
                    for b in range(4):
                        acc += Q1_STIFFNESS[a, b] * corner_vals[c, b, t]
                    ku[a, t] = acc
            for s in range(nf):
                for t in range(s, nf):
                    acc = 0.0
                    for a in range(4):
                        acc += corner_vals[c, a, s] * ku[a, t]
                    gram[s, t] += kappa[c] * acc
        for s in range(nf):
            for t in range(s + 1, nf):
                gram[t, s] = gram[s, t]
        return gram

    @numba.njit(cache=True)
    def _nb_group_corner_integrals(corner_vals, weights, group, ngroups):
        out = np.zeros(ngroups, dtype=np.float64)
        for c in range(corner_vals.shape[0]):
            g = group[c]
            if g < 0:
                continue
            m = 0.25 * (corner_vals[c, 0] + corner_vals[c, 1] + corner_vals[c, 2] + corner_vals[c, 3])
            out[g] += weights[c] * m
        return out


IMPLEMENTATIONS = {
    "numpy": {
        "stiffness_triplets": _np_stiffness_triplets,
        "scatter_corners": _np_scatter_corners,
        "energy_gram": _np_energy_gram,
        "group_corner_integrals": _np_group_corner_integrals,
    },
}
if HAVE_NUMBA:
    IMPLEMENTATIONS["numba"] = {
        "stiffness_triplets": _nb_stiffness_triplets,
        "scatter_corners": _nb_scatter_corners,
        "energy_gram": _nb_energy_gram,
        "group_corner_integrals": _nb_group_corner_integrals,
    }

BACKEND = _requested_backend()
_impl = IMPLEMENTATIONS[BACKEND]


def stiffness_triplets(dofs, kappa):
    """COO triplets of the Dirichlet-eliminated Q1 stiffness.

    ``dofs`` is an (ncells, 4) int64 array of corner unknown indices and
    ``kappa`` the per-cell coefficient.  Entries touching a -1 dof are dropped.
    """
    return _impl["stiffness_triplets"](
        np.ascontiguousarray(dofs, dtype=np.int64), np.ascontiguousarray(kappa, dtype=np.float64)
    )


def scatter_corners(dofs, weights, n):
    """Add ``weights[c]`` to every free corner of cell c; returns a length-n vector."""
    return _impl["scatter_corners"](
        np.ascontiguousarray(dofs, dtype=np.int64), np.ascontiguousarray(weights, dtype=np.float64), int(n)
    )


def energy_gram(corner_vals, kappa):
    """Gram matrix sum_c kappa_c u_c^T K v_c for k nodal fields.

    ``corner_vals`` has shape (ncells, 4, k).  The result is symmetric by
    construction (upper triangle mirrored).
    """
    return _impl["energy_gram"](
        np.ascontiguousarray(corner_vals, dtype=np.float64), np.ascontiguousarray(kappa, dtype=np.float64)
    )


def group_corner_integrals(corner_vals, weights, group, ngroups):
    """Per-group sums of ``weights[c] * mean(corner_vals[c])``; group -1 is skipped."""
    return _impl["group_corner_integrals"](
        np.ascontiguousarray(corner_vals, dtype=np.float64),
        np.ascontiguousarray(weights, dtype=np.float64),
        np.ascontiguousarray(group, dtype=np.int64),
        int(ngroups),
    )
