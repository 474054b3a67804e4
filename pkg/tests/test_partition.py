import numpy as np
import pytest

from skelpore import partition as pt, skeleton as sk, skelgraph as sg, voxelgrid as vg
from skelpore.errors import TopologyError

import oracles

DYADIC = [(1.0, 1.0, 1.0), (1.0, 0.5, 2.0), (1.5, 1.0, 0.75), (24.0, 24.0, 24.0)]


def run(grid, backend=None):
    branches = sg.extract_branches(sg.build_graph(sk.thin(grid, backend=backend)))
    assignment, d2 = pt.nearest_branch_transform(grid, branches, backend=backend)
    return branches, assignment, d2


@pytest.mark.parametrize("seed", range(6))
def test_assignment_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    dims = tuple(int(n) for n in rng.integers(6, 17, 3))
    res = DYADIC[seed % len(DYADIC)]
    grid = vg.make_porous(dims, rng.uniform(0.3, 0.6), rng.uniform(0.8, 1.6), seed, res)
    branches, assignment, _ = run(grid)
    expected = oracles.nearest_branch(grid.occupancy, sg.branch_image(branches, dims), res)
    assert np.array_equal(assignment, expected)


def test_distances_match_brute_force():
    grid = vg.make_porous((12, 10, 9), 0.45, 1.2, seed=3, resolution=(1.0, 0.5, 2.0))
    branches, _, d2 = run(grid)
    sk_pts = np.argwhere(sg.branch_image(branches, grid.dims) > 0)
    w = np.array(grid.resolution)
    for p in np.argwhere(grid.occupancy)[::7]:
        diff = (p - sk_pts) * w
        assert d2[tuple(p)] == pytest.approx(np.min((diff ** 2).sum(axis=1)), rel=1e-15)


def test_tie_goes_to_smaller_branch_id():
    seeds = np.zeros((5, 1, 1), np.int32)
    seeds[0, 0, 0] = 2
    seeds[4, 0, 0] = 1
    labels, d2 = pt.feature_labels(seeds, (1, 1, 1))
    assert labels[:, 0, 0].tolist() == [2, 2, 1, 1, 1]
    assert d2[2, 0, 0] == 4.0


def test_tie_in_three_dimensions():
    seeds = np.zeros((3, 3, 3), np.int32)
    seeds[0, 0, 2] = 5
    seeds[2, 2, 0] = 3
    seeds[0, 2, 0] = 4
    labels, _ = pt.feature_labels(seeds, (1, 1, 1))
    # (1, 1, 1) is at squared distance 3 from all three seeds.
    assert labels[1, 1, 1] == 3


def test_seed_voxel_gets_own_branch_at_distance_zero():
    seeds = np.zeros((4, 4, 4), np.int32)
    seeds[1, 2, 3] = 7
    seeds[3, 3, 3] = 2
    labels, d2 = pt.feature_labels(seeds, (24, 24, 24))
    assert labels[1, 2, 3] == 7 and d2[1, 2, 3] == 0.0


def test_anisotropy_changes_nearest():
    seeds = np.zeros((4, 4, 1), np.int32)
    seeds[0, 3, 0] = 2
    seeds[3, 0, 0] = 1
    iso, _ = pt.feature_labels(seeds, (1, 1, 1))
    aniso, d2 = pt.feature_labels(seeds, (1, 0.5, 1))
    # (1, 1): squared distance 5 to both seeds when isotropic, so the smaller id wins.
    assert iso[1, 1, 0] == 1
    # With 0.5 um along y: 1 + 1 = 2 to id 2 against 4 + 0.25 to id 1.
    assert aniso[1, 1, 0] == 2 and d2[1, 1, 0] == 2.0


def test_missing_branch_in_component():
    occ = np.zeros((7, 3, 3), bool)
    occ[0:2, 1, 1] = True
    occ[4:7, 1, 1] = True
    grid = vg.VoxelGrid(occ, (1, 1, 1))
    lone = sg.Branch(1, np.array([[0, 1, 1]]), np.zeros((0, 3), int), ())
    with pytest.raises(TopologyError):
        pt.nearest_branch_transform(grid, [lone])


def test_split_two_islands():
    a = np.zeros((6, 3, 3), np.int32)
    a[0:2, 1, 1] = 1
    a[2:4, 1, 1] = 2
    a[4:6, 1, 1] = 1
    part = pt.split_disconnected(a, (1, 1, 1))
    assert part.n_regions == 3
    assert part.branch_id.tolist() == [1, 1, 2]
    assert part.label_image[:, 1, 1].tolist() == [1, 1, 3, 3, 2, 2]


def test_connected_assignment_is_not_split():
    a = np.zeros((4, 4, 4), np.int32)
    a[:2] = 1
    a[2:] = 2
    part = pt.split_disconnected(a, (1, 1, 1))
    assert part.n_regions == 2 and part.branch_id.tolist() == [1, 2]


def test_single_voxel_centroid_and_volume():
    a = np.zeros((3, 3, 3), np.int32)
    a[0, 0, 0] = 1
    part = pt.split_disconnected(a, (24, 24, 24))
    assert part.centroid[0].tolist() == [12.0, 12.0, 12.0]
    assert part.volume[0] == 13824.0


@pytest.mark.parametrize("seed", range(4))
def test_partition_properties(seed):
    grid = vg.make_porous((18, 18, 18), 0.35, 1.2, seed=100 + seed)
    branches = sg.extract_branches(sg.build_graph(sk.thin(grid)))
    part = pt.partition_grid(grid, branches)
    lab = part.label_image
    assert np.array_equal(lab > 0, grid.occupancy)
    assert part.voxel_count.sum() == grid.n_pore
    assert sorted(np.unique(lab[lab > 0]).tolist()) == list(range(1, part.n_regions + 1))
    assert part.n_regions >= len(branches)
    for r in range(1, part.n_regions + 1):
        assert len(oracles.components(lab == r)) == 1
    # Region order: by branch id, then by first voxel in C order.
    first = [np.flatnonzero(lab.ravel() == r)[0] for r in range(1, part.n_regions + 1)]
    keys = list(zip(part.branch_id.tolist(), first))
    assert keys == sorted(keys)


def test_from_label_image_requires_dense_ids():
    lab = np.zeros((3, 3, 3), np.uint32)
    lab[0, 0, 0] = 1
    lab[2, 2, 2] = 3
    with pytest.raises(TopologyError):
        pt.Partition.from_label_image(lab, (1, 1, 1))


def test_region_table(tmp_path):
    a = np.zeros((3, 3, 3), np.int32)
    a[0, 0, 0] = 1
    a[2, 2, 2] = 2
    part = pt.split_disconnected(a, (24, 24, 24))
    pt.save_region_table(part, tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text() == (
        "region_id,branch_id,voxel_count,centroid_x_um,centroid_y_um,centroid_z_um\n"
        "1,1,1,12.0,12.0,12.0\n"
        "2,2,1,60.0,60.0,60.0\n"
    )
    assert pt.load_region_branch_ids(tmp_path / "r.csv").tolist() == [1, 2]


def test_label_pieces_match_bfs():
    rng = np.random.default_rng(8)
    labels = rng.integers(0, 4, (10, 10, 10))
    roots = pt.label_pieces(labels)
    for value in (1, 2, 3):
        for comp in oracles.components(labels == value):
            flat = [np.ravel_multi_index(v, labels.shape) for v in comp]
            assert {int(roots[v]) for v in comp} == {min(flat)}
    assert np.all(roots[labels == 0] == -1)
