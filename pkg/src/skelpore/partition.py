"""Nearest-branch partition of the pore space into connected regions.

Every pore voxel goes to the branch owning its nearest skeleton voxel
(Euclidean distance between voxel centers, in micrometers). Ties go to the
smallest branch id. A branch whose voxels form several 26-connected pieces
yields one region per piece.

The transform is separable: three 1D passes (x, then y, then z) each take,
for every position q on a line, the lexicographic minimum of
``(g[p] + (w * (q - p))**2, label[p])`` over sites p of the line. Because the
winning site is non-decreasing in q for any tie rule, each line is solved by
divide and conquer on q in O(n log n), which keeps the result exact, ties
included.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from . import _accel
from .errors import TopologyError
from .skelgraph import Branch, branch_image
from .voxelgrid import FORWARD13, VoxelGrid, connected_components

log = logging.getLogger(__name__)

NO_LABEL = np.iinfo(np.int32).max


# ---------------------------------------------------------------------------
# 1D lower envelope with lexicographic ties
# ---------------------------------------------------------------------------


@_accel.njit
def _line_envelope(g, lab, w, out_g, out_lab, sites, stack):
    n = g.shape[0]
    m = 0
    for p in range(n):
        if lab[p] != NO_LABEL:
            sites[m] = p
            m += 1
    if m == 0:
        for q in range(n):
            out_g[q] = np.inf
            out_lab[q] = NO_LABEL
        return
    # Stack of (q_lo, q_hi, s_lo, s_hi) intervals; s indexes into ``sites``.
    top = 0
    stack[0, 0] = 0
    stack[0, 1] = n - 1
    stack[0, 2] = 0
    stack[0, 3] = m - 1
    top = 1
    while top > 0:
        top -= 1
        qlo, qhi, slo, shi = stack[top, 0], stack[top, 1], stack[top, 2], stack[top, 3]
        if qlo > qhi:
            continue
        q = (qlo + qhi) // 2
        best = slo
        bg = np.inf
        bl = NO_LABEL
        for s in range(slo, shi + 1):
            p = sites[s]
            d = w * (q - p)
            val = g[p] + d * d
            if val < bg or (val == bg and lab[p] < bl):
                bg = val
                bl = lab[p]
                best = s
        out_g[q] = bg
        out_lab[q] = bl
        stack[top, 0] = qlo
        stack[top, 1] = q - 1
        stack[top, 2] = slo
        stack[top, 3] = best
        top += 1
        stack[top, 0] = q + 1
        stack[top, 1] = qhi
        stack[top, 2] = best
        stack[top, 3] = shi
        top += 1


@_accel.njit
def _pass_numba(g, lab, w):
    """Apply the 1D envelope along the last axis of 2D (lines, n) arrays."""
    n_lines, n = g.shape
    out_g = np.empty_like(g)
    out_lab = np.empty_like(lab)
    sites = np.empty(n, dtype=np.int64)
    stack = np.empty((2 * n + 64, 4), dtype=np.int64)
    for t in range(n_lines):
        _line_envelope(g[t], lab[t], w, out_g[t], out_lab[t], sites, stack)
    return out_g, out_lab


def _pass_numpy(g, lab, w):
    n_lines, n = g.shape
    out_g = np.empty_like(g)
    out_lab = np.empty_like(lab)
    p = np.arange(n)
    for q in range(n):
        d = w * (q - p)
        val = g + d * d
        best = val.min(axis=1)
        tied = val == best[:, None]
        out_g[:, q] = best
        out_lab[:, q] = np.where(tied, lab, NO_LABEL).min(axis=1)
    return out_g, out_lab


def feature_labels(seeds: np.ndarray, resolution, backend: str | None = None):
    """Nearest-seed label and squared distance for every voxel.

    ``seeds`` is an int image with a positive label on seed voxels and 0
    elsewhere. Returns ``(labels, d2)``; labels are 0 where no seed exists.
    """
    backend = _accel.resolve_backend(backend)
    seeds = np.asarray(seeds)
    lab = np.where(seeds > 0, seeds, NO_LABEL).astype(np.int32)
    g = np.where(seeds > 0, 0.0, np.inf)
    run = _pass_numba if backend == "numba" else _pass_numpy
    for axis, w in enumerate(resolution):
        g_t = np.ascontiguousarray(np.moveaxis(g, axis, -1))
        l_t = np.ascontiguousarray(np.moveaxis(lab, axis, -1))
        shp = g_t.shape
        g2, l2 = run(g_t.reshape(-1, shp[-1]), l_t.reshape(-1, shp[-1]), float(w))
        g = np.moveaxis(g2.reshape(shp), -1, axis)
        lab = np.moveaxis(l2.reshape(shp), -1, axis)
    lab = np.where(lab == NO_LABEL, 0, lab).astype(np.int32)
    return np.ascontiguousarray(lab), np.ascontiguousarray(g)


# ---------------------------------------------------------------------------
# Connected pieces of each label (26-connectivity)
# ---------------------------------------------------------------------------


@_accel.njit
def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@_accel.njit
def _pieces_numba(labels, offsets):
    """Union-find over equal-label 26-neighbors; returns each voxel's smallest-index root."""
    nx, ny, nz = labels.shape
    flat = labels.ravel()
    parent = np.arange(flat.size)
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                a = flat[(i * ny + j) * nz + k]
                if a == 0:
                    continue
                u = (i * ny + j) * nz + k
                for t in range(offsets.shape[0]):
                    ii, jj, kk = i + offsets[t, 0], j + offsets[t, 1], k + offsets[t, 2]
                    if ii < 0 or jj < 0 or kk < 0 or ii >= nx or jj >= ny or kk >= nz:
                        continue
                    v = (ii * ny + jj) * nz + kk
                    if flat[v] != a:
                        continue
                    ru = _find(parent, u)
                    rv = _find(parent, v)
                    if ru < rv:
                        parent[rv] = ru
                    elif rv < ru:
                        parent[ru] = rv
    out = np.full(flat.size, -1, dtype=np.int64)
    for u in range(flat.size):
        if flat[u] != 0:
            out[u] = _find(parent, u)
    return out.reshape(labels.shape)


def _pieces_numpy(labels):
    shape = labels.shape
    flat_index = np.arange(labels.size).reshape(shape)
    rows, cols = [], []
    for off in FORWARD13:
        src = tuple(slice(max(0, -d), n - max(0, d)) for d, n in zip(off, shape))
        dst = tuple(slice(max(0, d), n - max(0, -d)) for d, n in zip(off, shape))
        same = (labels[src] != 0) & (labels[src] == labels[dst])
        rows.append(flat_index[src][same])
        cols.append(flat_index[dst][same])
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    graph = sparse.coo_matrix((np.ones(len(rows), np.int8), (rows, cols)), shape=(labels.size, labels.size))
    _, comp = csgraph.connected_components(graph, directed=False)
    # Canonical root: the smallest flat index in each component.
    root_of = np.full(comp.max() + 1, labels.size, dtype=np.int64)
    np.minimum.at(root_of, comp, np.arange(labels.size))
    out = root_of[comp].reshape(shape)
    return np.where(labels != 0, out, -1)


def label_pieces(labels: np.ndarray, backend: str | None = None) -> np.ndarray:
    """For each nonzero voxel, the smallest C-order flat index of its piece; -1 elsewhere."""
    backend = _accel.resolve_backend(backend)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if backend == "numba":
        return _pieces_numba(labels, FORWARD13)
    return _pieces_numpy(labels)


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Partition:
    """Label image (0 off S, regions 1..R) and per-region attributes.

    Region ``r`` lives at index ``r - 1`` of the attribute arrays. Centroids
    use voxel centers ``((i + 0.5) rx, (j + 0.5) ry, (k + 0.5) rz)``.
    """

    label_image: np.ndarray
    branch_id: np.ndarray
    voxel_count: np.ndarray
    centroid: np.ndarray
    resolution: tuple[float, float, float]

    @property
    def n_regions(self) -> int:
        return int(self.voxel_count.shape[0])

    @property
    def volume(self) -> np.ndarray:
        rx, ry, rz = self.resolution
        return self.voxel_count * (rx * ry * rz)

    @classmethod
    def from_label_image(cls, labels, resolution, branch_id=None) -> "Partition":
        labels = np.asarray(labels).astype(np.uint32)
        n = int(labels.max()) if labels.size else 0
        count, centroid = _region_stats(labels, n, resolution)
        if np.any(count == 0):
            raise TopologyError("label image has unused region ids; labels must be dense 1..R")
        if branch_id is None:
            branch_id = np.zeros(n, dtype=np.int64)
        return cls(labels, np.asarray(branch_id, dtype=np.int64), count, centroid, tuple(map(float, resolution)))


def _region_stats(labels, n, resolution):
    idx = np.nonzero(labels)
    lab = labels[idx].astype(np.int64) - 1
    count = np.bincount(lab, minlength=n).astype(np.int64)
    centroid = np.zeros((n, 3))
    for axis in range(3):
        pos = (idx[axis] + 0.5) * resolution[axis]
        sums = np.bincount(lab, weights=pos, minlength=n)
        with np.errstate(invalid="ignore", divide="ignore"):
            centroid[:, axis] = sums / count
    return count, centroid


def nearest_branch_transform(grid: VoxelGrid, branches: list[Branch], backend: str | None = None):
    """Branch id of the nearest skeleton voxel for each pore voxel (0 off S).

    Returns ``(assignment, d2)`` with squared distances in um^2.
    """
    seeds = branch_image(branches, grid.dims)
    if np.any(seeds[~grid.occupancy]):
        raise TopologyError("branch voxels must lie inside the pore space")
    comp, n_comp = connected_components(grid)
    if n_comp:
        seeded = np.zeros(n_comp + 1, dtype=bool)
        seeded[comp[seeds > 0]] = True
        if not seeded[1:].all():
            missing = np.flatnonzero(~seeded[1:]) + 1
            raise TopologyError(f"{len(missing)} pore component(s) contain no branch voxel")
    labels, d2 = feature_labels(seeds, grid.resolution, backend=backend)
    labels[~grid.occupancy] = 0
    return labels, d2


def split_disconnected(assignment: np.ndarray, resolution, backend: str | None = None) -> Partition:
    """Turn each 26-connected piece of each branch's voxels into one region.

    Region ids are dense 1..R, ordered by branch id then by the piece's
    lexicographically smallest voxel.
    """
    assignment = np.asarray(assignment)
    roots = label_pieces(assignment, backend=backend)
    on = assignment != 0
    root_vals = roots[on]
    uniq = np.unique(root_vals)
    if uniq.size == 0:
        empty = np.zeros(0)
        return Partition(
            np.zeros(assignment.shape, np.uint32), empty.astype(np.int64), empty.astype(np.int64),
            np.zeros((0, 3)), tuple(map(float, resolution)),
        )
    piece_branch = assignment.ravel()[uniq]
    order = np.lexsort((uniq, piece_branch))
    region_of_root = np.empty(uniq.size, dtype=np.int64)
    region_of_root[order] = np.arange(1, uniq.size + 1)
    labels = np.zeros(assignment.shape, dtype=np.uint32)
    labels[on] = region_of_root[np.searchsorted(uniq, root_vals)]
    n_regions = int(uniq.size)
    n_branches = int(np.unique(piece_branch).size)
    if n_regions > n_branches:
        log.info("split %d branch assignments into %d regions", n_branches, n_regions)
    count, centroid = _region_stats(labels, n_regions, resolution)
    return Partition(labels, piece_branch[order].astype(np.int64), count, centroid, tuple(map(float, resolution)))


def partition_grid(grid: VoxelGrid, branches: list[Branch], backend: str | None = None) -> Partition:
    assignment, _ = nearest_branch_transform(grid, branches, backend=backend)
    return split_disconnected(assignment, grid.resolution, backend=backend)


def save_region_table(part: Partition, path) -> None:
    with open(path, "w") as fh:
        fh.write("region_id,branch_id,voxel_count,centroid_x_um,centroid_y_um,centroid_z_um\n")
        for r in range(part.n_regions):
            cx, cy, cz = (float(x) for x in part.centroid[r])
            fh.write(f"{r + 1},{part.branch_id[r]},{part.voxel_count[r]},{cx!r},{cy!r},{cz!r}\n")


def load_region_branch_ids(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 1].astype(np.int64) if data.size else np.zeros(0, np.int64)
