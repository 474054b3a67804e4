"""Both kernel backends must produce bit-identical results."""

import os
import subprocess
import sys

import numpy as np
import pytest

from skelpore import _accel, partition as pt, poregraph as pg, simulate as sm, skeleton as sk, skelgraph as sg
from skelpore import voxelgrid as vg

import oracles

pytestmark = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")


@pytest.mark.parametrize("kind", ["cylinder", "torus", "L-tube", "cube-with-hole", "y-tube"])
def test_thin_shapes(kind):
    params = {"cylinder": dict(radius=3, length=40), "torus": dict(major=14, minor=4),
              "L-tube": dict(radius=3, arm=20), "cube-with-hole": dict(side=30, hole=8),
              "y-tube": dict(radius=3, arm=20)}[kind]
    g = vg.make_shape(kind, **params)
    assert np.array_equal(sk.thin(g, backend="numba").mask, sk.thin(g, backend="numpy").mask)


@pytest.mark.parametrize("seed", range(4))
def test_pipeline_kernels_agree(seed):
    rng = np.random.default_rng(seed)
    dims = tuple(int(n) for n in rng.integers(10, 20, 3))
    g = vg.make_porous(dims, rng.uniform(0.3, 0.5), 1.2, seed, (1.0, 0.5, 2.0))
    a, b = sk.thin(g, backend="numba"), sk.thin(g, backend="numpy")
    assert np.array_equal(a.mask, b.mask)
    branches = sg.extract_branches(sg.build_graph(a))
    seeds = sg.branch_image(branches, dims)
    la, da = pt.feature_labels(seeds, g.resolution, backend="numba")
    lb, db = pt.feature_labels(seeds, g.resolution, backend="numpy")
    assert np.array_equal(la, lb) and np.array_equal(da, db)
    assign = np.where(g.occupancy, la, 0)
    assert np.array_equal(pt.label_pieces(assign, backend="numba"), pt.label_pieces(assign, backend="numpy"))
    part = pt.partition_grid(g, branches)
    pa, ca = pg.surfel_counts(part.label_image, backend="numba")
    pb, cb = pg.surfel_counts(part.label_image, backend="numpy")
    assert np.array_equal(pa, pb) and np.array_equal(ca, cb)


def test_solvers_agree():
    rng = np.random.default_rng(0)
    net = pg.PoreNetwork(**oracles.random_network(rng, 300))
    theta = sm.build_conductances(net, sm.DiffusionParams(3.0, 1.0))
    c = rng.uniform(0, 1, 300)
    a = sm.step_implicit(c, net, theta, backend="numba")
    b = sm.step_implicit(c, net, theta, backend="numpy")
    assert np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(a))


def test_resolve_backend():
    assert _accel.resolve_backend("NumPy") == "numpy"
    with pytest.raises(ValueError):
        _accel.resolve_backend("fortran")


@pytest.mark.parametrize("value, expected", [("numpy", "numpy"), ("numba", "numba"), ("", "numba")])
def test_environment_flag(value, expected):
    env = dict(os.environ, SKELPORE_BACKEND=value)
    out = subprocess.run([sys.executable, "-c", "from skelpore import _accel; print(_accel.resolve_backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected


def test_bad_environment_flag():
    env = dict(os.environ, SKELPORE_BACKEND="cuda")
    out = subprocess.run([sys.executable, "-c", "import skelpore._accel"], env=env, capture_output=True, text=True)
    assert out.returncode != 0 and "SKELPORE_BACKEND" in out.stderr
