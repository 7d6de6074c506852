import os
import subprocess
import sys

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from numpy.polynomial.legendre import leggauss

from multicontinuum import kernels


def gauss_q1_stiffness(order=3):
    """Reference-square stiffness from tensor Gauss quadrature of grad N_a . grad N_b."""
    pts, wts = leggauss(order)
    pts = 0.5 * (pts + 1.0)
    wts = 0.5 * wts
    corners = [(0, 0), (1, 0), (1, 1), (0, 1)]  # (x, y), counterclockwise
    K = np.zeros((4, 4))
    for x, wx in zip(pts, wts):
        for y, wy in zip(pts, wts):
            grads = []
            for cx, cy in corners:
                sx, sy = (x if cx else 1 - x), (y if cy else 1 - y)
                dx = (1 if cx else -1) * sy
                dy = (1 if cy else -1) * sx
                grads.append((dx, dy))
            g = np.array(grads)
            K += wx * wy * g @ g.T
    return K


def test_reference_stiffness_matches_quadrature():
    assert np.allclose(kernels.Q1_STIFFNESS, gauss_q1_stiffness(), atol=1e-15)


def test_reference_stiffness_properties():
    K = kernels.Q1_STIFFNESS
    assert np.allclose(K, K.T)
    assert np.allclose(K.sum(axis=1), 0.0)
    w = np.linalg.eigvalsh(K)
    assert abs(w[0]) < 1e-14 and np.all(w[1:] > 0)


def test_backend_selection():
    assert kernels.BACKEND in kernels.IMPLEMENTATIONS


def _random_problem(seed, ncells=60, n=40):
    rng = np.random.default_rng(seed)
    dofs = rng.integers(-1, n, size=(ncells, 4))
    kappa = rng.uniform(0.5, 3.0, ncells)
    vals = rng.normal(size=(ncells, 4, 3))
    w = rng.uniform(size=ncells)
    group = rng.integers(-1, 5, size=ncells)
    return dofs, kappa, vals, w, group, n


@pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not installed")
@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_numba_matches_numpy(seed):
    dofs, kappa, vals, w, group, n = _random_problem(seed)
    a, b = kernels.IMPLEMENTATIONS["numpy"], kernels.IMPLEMENTATIONS["numba"]
    ra, rb = a["stiffness_triplets"](dofs, kappa), b["stiffness_triplets"](dofs, kappa)
    Ma = sp.coo_matrix((ra[2], (ra[0], ra[1])), shape=(n, n)).toarray()
    Mb = sp.coo_matrix((rb[2], (rb[0], rb[1])), shape=(n, n)).toarray()
    assert np.allclose(Ma, Mb, rtol=1e-14, atol=1e-14)
    assert np.allclose(a["scatter_corners"](dofs, w, n), b["scatter_corners"](dofs, w, n), atol=1e-14)
    assert np.allclose(a["energy_gram"](vals, kappa), b["energy_gram"](vals, kappa), rtol=1e-13, atol=1e-13)
    assert np.allclose(a["group_corner_integrals"](vals[:, :, 0], w, group, 5),
                       b["group_corner_integrals"](vals[:, :, 0], w, group, 5), atol=1e-14)


@pytest.mark.parametrize("impl", sorted(kernels.IMPLEMENTATIONS))
def test_energy_gram_oracle(impl):
    rng = np.random.default_rng(3)
    vals = rng.normal(size=(7, 4, 3))
    kappa = rng.uniform(1, 2, 7)
    expect = np.einsum("c,cas,ab,cbt->st", kappa, vals, kernels.Q1_STIFFNESS, vals)
    got = kernels.IMPLEMENTATIONS[impl]["energy_gram"](vals, kappa)
    assert np.allclose(got, expect, rtol=1e-13)
    assert np.array_equal(got, got.T)


@pytest.mark.parametrize("impl", sorted(kernels.IMPLEMENTATIONS))
def test_triplets_drop_dirichlet(impl):
    dofs = np.array([[0, 1, -1, 2]])
    rows, cols, vals = kernels.IMPLEMENTATIONS[impl]["stiffness_triplets"](dofs, np.array([2.0]))
    assert len(vals) == 9 and np.all(rows >= 0) and np.all(cols >= 0)


@pytest.mark.parametrize("impl", sorted(kernels.IMPLEMENTATIONS))
def test_group_integrals_oracle(impl):
    vals = np.array([[1.0, 2, 3, 4], [0, 0, 0, 4], [1, 1, 1, 1]])
    got = kernels.IMPLEMENTATIONS[impl]["group_corner_integrals"](vals, np.array([2.0, 1, 5]),
                                                                  np.array([0, 0, -1]), 2)
    assert np.allclose(got, [2 * 2.5 + 1.0, 0.0])


@pytest.mark.parametrize("value,expect", [("numpy", "numpy"), ("NumPy", "numpy")])
def test_env_flag_selects_backend(value, expect):
    code = "from multicontinuum import kernels; print(kernels.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env={**os.environ, "MULTICONTINUUM_BACKEND": value},
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expect


def test_env_flag_rejects_unknown():
    code = "import multicontinuum.kernels"
    out = subprocess.run([sys.executable, "-c", code], env={**os.environ, "MULTICONTINUUM_BACKEND": "cuda"},
                         capture_output=True, text=True)
    assert out.returncode != 0 and "MULTICONTINUUM_BACKEND" in out.stderr
