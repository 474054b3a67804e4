import numpy as np
import pytest

from skelpore import skeleton as sk, skelgraph as sg, voxelgrid as vg

import oracles


def mask_of(points, shape=(16, 16, 16)):
    m = np.zeros(shape, bool)
    for p in points:
        m[p] = True
    return m


def line10():
    return mask_of([(i, 3, 3) for i in range(2, 12)])


def y_junction():
    # Three 5-voxel arms meeting at the center voxel (8, 8, 8).
    pts = [(8, 8, 8)]
    pts += [(8, 8 + t, 8) for t in range(1, 6)]
    pts += [(8 - t, 8 - t, 8) for t in range(1, 6)]
    pts += [(8 + t, 8 - t, 8) for t in range(1, 6)]
    return mask_of(pts)


def loop8():
    # Diamond of diagonal steps: every voxel has exactly two 26-neighbors.
    ring = [(2, 0), (3, 1), (4, 2), (3, 3), (2, 4), (1, 3), (0, 2), (1, 1)]
    return mask_of([(4 + a, 4 + b, 4) for a, b in ring])


def test_line_graph():
    g = sg.build_graph(line10())
    assert g.n_nodes == 10 and g.n_edges == 9
    assert g.count(sg.ENDING) == 2 and g.count(sg.SIMPLE) == 8


def test_y_graph_and_branches():
    g = sg.build_graph(y_junction())
    assert g.count(sg.INTERIOR) == 1 and g.count(sg.ENDING) == 3
    assert tuple(g.coords[g.kind == sg.INTERIOR][0]) == (8, 8, 8)
    branches = sg.extract_branches(g)
    assert len(branches) == 3
    assert sorted(b.size for b in branches) == [4, 4, 4]
    for b in branches:
        assert sorted(b.endpoint_kinds) == ["ending", "interior"]


def test_loop_graph_and_branch():
    g = sg.build_graph(loop8())
    assert g.count(sg.SIMPLE) == 8 and g.count(sg.ENDING) == 0 and g.count(sg.INTERIOR) == 0
    branches = sg.extract_branches(g)
    assert len(branches) == 1 and branches[0].size == 8 and branches[0].endpoint_kinds == ()


def test_edges_match_brute_force():
    rng = np.random.default_rng(2)
    m = rng.random((9, 9, 9)) < 0.2
    g = sg.build_graph(m)
    pts = [tuple(p) for p in g.coords]
    expected = set()
    for a in range(len(pts)):
        for b in range(a + 1, len(pts)):
            if max(abs(pts[a][t] - pts[b][t]) for t in range(3)) == 1:
                expected.add((a, b))
    assert set(map(tuple, g.edges.tolist())) == expected
    assert np.all(g.edges[:, 0] < g.edges[:, 1])


def test_isolated_voxel_is_ending_singleton_branch():
    g = sg.build_graph(mask_of([(1, 1, 1)]))
    assert g.kind.tolist() == [sg.ENDING]
    branches = sg.extract_branches(g)
    assert len(branches) == 1 and branches[0].size == 1


def test_component_without_simple_nodes_gets_one_branch():
    # Two adjacent voxels: both ending, no simple node.
    branches = sg.extract_branches(sg.build_graph(mask_of([(1, 1, 1), (2, 1, 1)])))
    assert len(branches) == 1 and branches[0].size == 2


def test_branch_voxels_are_ordered_along_path():
    branches = sg.extract_branches(sg.build_graph(line10()))
    vox = branches[0].voxels
    assert np.all(np.abs(np.diff(vox, axis=0)).max(axis=1) == 1)
    assert tuple(vox[0]) == (3, 3, 3) and tuple(vox[-1]) == (10, 3, 3)


def test_empty_mask():
    g = sg.build_graph(np.zeros((3, 3, 3), bool))
    assert g.n_nodes == 0 and sg.extract_branches(g) == []


@pytest.mark.parametrize("seed", range(4))
def test_branch_invariants_on_random_skeletons(seed):
    g0 = vg.make_porous((20, 20, 20), 0.35, 1.3, seed=seed)
    graph = sg.build_graph(sk.thin(g0))
    branches = sg.extract_branches(graph)
    simple = {tuple(p) for p in graph.coords[graph.kind == sg.SIMPLE]}
    members = [{tuple(v) for v in b.voxels} for b in branches]
    promoted = [m for m in members if not m & simple]
    # Branches made of simple nodes partition the simple nodes.
    regular = [m for m in members if m & simple]
    assert all(m <= simple for m in regular)
    assert sum(len(m) for m in regular) == len(simple)
    assert set().union(*regular) == simple if regular else not simple
    # Removing non-simple nodes leaves components in bijection with regular branches.
    simple_mask = mask_of(simple, g0.dims)
    assert len(oracles.components(simple_mask)) == len(regular)
    # Ids follow the smallest member voxel.
    firsts = [min(tuple(v) for v in b.voxels) for b in branches]
    assert firsts == sorted(firsts)
    assert [b.id for b in branches] == list(range(1, len(branches) + 1))
    for m in promoted:
        assert not m & simple


def test_branch_table(tmp_path):
    branches = sg.extract_branches(sg.build_graph(y_junction()))
    sg.save_branch_table(branches, tmp_path / "b.csv")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "branch_id,size,endpoint_kinds,first_i,first_j,first_k,last_i,last_j,last_k"
    assert len(lines) == 4
    assert lines[1].split(",")[:3] == ["1", "4", "ending;interior"]


def test_branch_image():
    branches = sg.extract_branches(sg.build_graph(y_junction()))
    img = sg.branch_image(branches, (16, 16, 16))
    assert img.dtype == np.int32
    assert sorted(np.unique(img).tolist()) == [0, 1, 2, 3]
    assert img[8, 8, 8] == 0
