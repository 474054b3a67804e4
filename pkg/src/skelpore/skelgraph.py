"""Voxel-level skeleton graph and its segmentation into branches.

Nodes are skeleton voxels, edges join 26-adjacent skeleton voxels. A node is
*ending* with at most one neighbor, *simple* with exactly two and *interior*
with three or more. A branch is a maximal 26-connected set of simple nodes.

Two extensions keep every skeleton component owning at least one branch (so
every pore component can be partitioned): an isolated skeleton voxel, and more
generally any skeleton component with no simple node at all, becomes a single
branch made of all its nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .skeleton import SkeletonMask
from .voxelgrid import FORWARD13

ENDING, SIMPLE, INTERIOR = 0, 1, 2
KIND_NAMES = ("ending", "simple", "interior")


@dataclass(frozen=True)
class SkeletonGraph:
    coords: np.ndarray  # (n, 3) voxel coordinates, lexicographic
    edges: np.ndarray  # (m, 2) node pairs with a < b
    degree: np.ndarray
    kind: np.ndarray
    shape: tuple[int, int, int]

    @property
    def n_nodes(self) -> int:
        return int(self.coords.shape[0])

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    def adjacency(self) -> sparse.csr_matrix:
        n = self.n_nodes
        a, b = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(a), dtype=np.int8)
        return sparse.csr_matrix((data, (np.r_[a, b], np.r_[b, a])), shape=(n, n))

    def count(self, kind: int) -> int:
        return int(np.count_nonzero(self.kind == kind))


@dataclass(frozen=True)
class Branch:
    id: int
    voxels: np.ndarray  # (k, 3), ordered along the branch
    endpoints: np.ndarray  # (e, 3) ending / interior nodes adjacent to the branch
    endpoint_kinds: tuple[str, ...]

    @property
    def size(self) -> int:
        return int(self.voxels.shape[0])


def build_graph(mask) -> SkeletonGraph:
    """One node per skeleton voxel, edges between 26-adjacent voxels."""
    m = mask.mask if isinstance(mask, SkeletonMask) else np.asarray(mask, dtype=bool)
    coords = np.argwhere(m).astype(np.int64)
    index = np.full(m.shape, -1, dtype=np.int64)
    index[tuple(coords.T)] = np.arange(len(coords))
    pairs = []
    nx, ny, nz = m.shape
    for di, dj, dk in FORWARD13:
        src = tuple(slice(max(0, -d), n - max(0, d)) for d, n in zip((di, dj, dk), (nx, ny, nz)))
        dst = tuple(slice(max(0, d), n - max(0, -d)) for d, n in zip((di, dj, dk), (nx, ny, nz)))
        both = m[src] & m[dst]
        a, b = index[src][both], index[dst][both]
        pairs.append(np.stack([np.minimum(a, b), np.maximum(a, b)], axis=1))
    edges = np.concatenate(pairs) if pairs else np.zeros((0, 2), np.int64)
    edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]
    degree = np.bincount(edges.ravel(), minlength=len(coords)).astype(np.int64)
    kind = np.where(degree <= 1, ENDING, np.where(degree == 2, SIMPLE, INTERIOR)).astype(np.int8)
    return SkeletonGraph(coords, edges, degree, kind, tuple(int(n) for n in m.shape))


def _order_group(members: np.ndarray, adj: sparse.csr_matrix, in_group: np.ndarray) -> np.ndarray:
    """Order a path or cycle of simple nodes by walking it from one end."""
    if len(members) <= 2:
        return members

    def inner(u):
        nbrs = adj.indices[adj.indptr[u]:adj.indptr[u + 1]]
        return np.sort(nbrs[in_group[nbrs]])

    ends = [u for u in members if len(inner(u)) < 2]
    start = min(ends) if ends else members[0]
    order = [start]
    seen = {start}
    cur = start
    while True:
        nxt = [v for v in inner(cur) if v not in seen]
        if not nxt:
            break
        cur = nxt[0]
        seen.add(cur)
        order.append(cur)
    if len(order) != len(members):  # not a simple path; keep it deterministic anyway
        rest = [u for u in members if u not in seen]
        order.extend(rest)
    return np.asarray(order, dtype=np.int64)


def extract_branches(graph: SkeletonGraph) -> list[Branch]:
    """Branches with deterministic ids 1..B (ordered by smallest member voxel)."""
    n = graph.n_nodes
    if n == 0:
        return []
    adj = graph.adjacency()
    simple = graph.kind == SIMPLE

    a, b = graph.edges[:, 0], graph.edges[:, 1]
    keep = simple[a] & simple[b]
    sub = sparse.csr_matrix(
        (np.ones(2 * keep.sum(), np.int8), (np.r_[a[keep], b[keep]], np.r_[b[keep], a[keep]])), shape=(n, n)
    )
    _, simple_comp = csgraph.connected_components(sub, directed=False)
    _, skel_comp = csgraph.connected_components(adj, directed=False)

    group = np.full(n, -1, dtype=np.int64)
    group[simple] = simple_comp[simple]
    # Skeleton components without a single simple node become one branch each.
    has_simple = np.zeros(skel_comp.max() + 1, dtype=bool)
    has_simple[skel_comp[simple]] = True
    orphan = ~has_simple[skel_comp]
    group[orphan] = simple_comp.max() + 1 + skel_comp[orphan]

    assigned = np.flatnonzero(group >= 0)
    order = assigned[np.lexsort((assigned, group[assigned]))]
    gvals = group[order]
    starts = np.r_[0, np.flatnonzero(np.diff(gvals)) + 1]
    groups = np.split(order, starts[1:])
    groups.sort(key=lambda g: int(g.min()))

    branches = []
    for bid, members in enumerate(groups, start=1):
        in_group = np.zeros(n, dtype=bool)
        in_group[members] = True
        if simple[members[0]]:
            ordered = _order_group(np.sort(members), adj, in_group)
        else:
            ordered = np.sort(members)
        touching = np.unique(np.concatenate([adj.indices[adj.indptr[u]:adj.indptr[u + 1]] for u in members]))
        touching = touching[~in_group[touching]]
        branches.append(
            Branch(
                id=bid,
                voxels=graph.coords[ordered],
                endpoints=graph.coords[touching],
                endpoint_kinds=tuple(KIND_NAMES[graph.kind[t]] for t in touching),
            )
        )
    return branches


def branch_image(branches: list[Branch], shape) -> np.ndarray:
    """int32 image holding each branch id on its voxels, 0 elsewhere."""
    img = np.zeros(shape, dtype=np.int32)
    for br in branches:
        img[tuple(br.voxels.T)] = br.id
    return img


def save_branch_table(branches: list[Branch], path) -> None:
    with open(path, "w") as fh:
        fh.write("branch_id,size,endpoint_kinds,first_i,first_j,first_k,last_i,last_j,last_k\n")
        for br in branches:
            f, last = br.voxels[0], br.voxels[-1]
            kinds = ";".join(br.endpoint_kinds)
            fh.write(f"{br.id},{br.size},{kinds},{f[0]},{f[1]},{f[2]},{last[0]},{last[1]},{last[2]}\n")
