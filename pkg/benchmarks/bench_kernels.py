"""Time the numba and numpy kernel backends on a realistic fine grid.

    python3 benchmarks/bench_kernels.py [--eps 1/10] [--repeat 5]
"""
import argparse
import time
from fractions import Fraction

import numpy as np

from multicontinuum import kernels
from multicontinuum.experiments import parse_eps
from multicontinuum.fem import sample
from multicontinuum.geometry import build_mesh
from multicontinuum.problems import kappa_sine


def best_of(fn, repeat):
    fn()  # warm-up (numba compile / cache load)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eps", type=parse_eps, default=Fraction(1, 10))
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    patch = build_mesh(1, args.eps).patch
    dofs = patch.cell_dofs
    kappa = sample(kappa_sine, *patch.cell_midpoints)
    rng = np.random.default_rng(0)
    u = rng.normal(size=(patch.n_free, 6))
    vals = patch.corner_values(u)
    w = np.full(len(kappa), patch.h ** 2)
    group = patch.cell_block

    work = {
        "stiffness_triplets": lambda impl: impl["stiffness_triplets"](dofs, kappa),
        "scatter_corners": lambda impl: impl["scatter_corners"](dofs, w, patch.n_free),
        "energy_gram": lambda impl: impl["energy_gram"](vals, kappa),
        "group_corner_integrals": lambda impl: impl["group_corner_integrals"](vals[:, :, 0], w, group,
                                                                              patch.mesh.n_blocks),
    }
    backends = sorted(kernels.IMPLEMENTATIONS)
    print(f"{len(kappa)} cells, {patch.n_free} free nodes, best of {args.repeat}")
    print(f"{'kernel':<24}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, call in work.items():
        t = {b: best_of(lambda: call(kernels.IMPLEMENTATIONS[b]), args.repeat) for b in backends}
        line = f"{name:<24}" + "".join(f"{t[b] * 1e3:>10.2f}ms" for b in backends)
        if "numba" in t:
            line += f"{t['numpy'] / t['numba']:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
