"""Time the numba and numpy kernels on the same inputs.

    python benchmarks/bench_backends.py [--size 64] [--nodes 20000] [--repeat 3]

Each kernel is run once per backend to warm up (numba compiles on first
call), then timed ``--repeat`` times; the best time is reported.
"""

import argparse
import time

import numpy as np
from scipy.spatial import cKDTree

from skelpore import _accel, partition as pt, poregraph as pg, simulate as sm, skeleton as sk, skelgraph as sg
from skelpore import voxelgrid as vg


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def knn_network(n, k=6, seed=0):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 12288.0, (n, 3))
    _, nbr = cKDTree(pts).query(pts, k + 1)
    i, j = np.repeat(np.arange(n), k), nbr[:, 1:].ravel()
    pairs = np.unique(np.stack([np.minimum(i, j), np.maximum(i, j)], axis=1), axis=0)
    dist = np.linalg.norm(pts[pairs[:, 0]] - pts[pairs[:, 1]], axis=1)
    return pg.PoreNetwork(rng.uniform(0.2, 1.8, n) * 1.7e7, pts, pairs[:, 0], pairs[:, 1],
                          rng.uniform(1, 60, len(pairs)) * 576.0, dist)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--nodes", type=int, default=20000)
    ap.add_argument("--steps", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    grid = vg.make_porous((args.size,) * 3, 0.3, 2.0, seed=1, resolution=(24.0, 24.0, 24.0))
    skel = sk.thin(grid)
    branches = sg.extract_branches(sg.build_graph(skel))
    seeds = sg.branch_image(branches, grid.dims)
    assign, _ = pt.feature_labels(seeds, grid.resolution)
    assign = np.where(grid.occupancy, assign, 0)
    labels = pt.partition_grid(grid, branches).label_image
    net = knn_network(args.nodes)
    theta = sm.build_conductances(net, sm.DiffusionParams(2.4228e6, 0.24))
    c0 = np.random.default_rng(2).uniform(0, 1, net.n_nodes)

    def diffuse(backend):
        d = sm.Diffuser(net, theta, backend=backend)
        c = c0
        for _ in range(args.steps):
            c = d.implicit(c)

    kernels = {
        f"thin {args.size}^3": lambda b: sk.thin(grid, backend=b),
        "feature_labels": lambda b: pt.feature_labels(seeds, grid.resolution, backend=b),
        "label_pieces": lambda b: pt.label_pieces(assign, backend=b),
        "surfel_counts": lambda b: pg.surfel_counts(labels, backend=b),
        f"implicit x{args.steps} ({args.nodes} nodes)": diffuse,
    }
    print(f"{'kernel':36s} {'numba s':>10s} {'numpy s':>10s} {'ratio':>7s}")
    for name, fn in kernels.items():
        tn = best_of(lambda: fn("numba"), args.repeat)
        tp = best_of(lambda: fn("numpy"), args.repeat)
        print(f"{name:36s} {tn:10.4f} {tp:10.4f} {tp / tn:7.1f}")


if __name__ == "__main__":
    main()
