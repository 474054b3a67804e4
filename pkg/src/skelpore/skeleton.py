"""Curvilinear skeleton by homotopic thinning.

A pore voxel is removed when it lies on the border of S, is not an ending
point (exactly one 26-neighbor), and is a simple point: removing it changes
neither the Euler characteristic nor the number of 26-connected components.
Deletion is done in six directional sub-passes (-x, +x, -y, +y, -z, +z); in
each sub-pass, candidates are the voxels whose face neighbor in that direction
is background. Candidates are screened on the state at the start of the
sub-pass (border in that direction, not an ending point, simple), then
re-validated for simplicity only and removed one by one in lexicographic
(i, j, k) order. Passes repeat until nothing changes.

The simple-point test is local to the 3x3x3 neighborhood:

- Euler invariance through an octant lookup table (128 entries, one per
  configuration of the 7 neighbors sharing an octant with the center),
- exactly one 26-connected object component among the 26 neighbors,
- exactly one 6-connected background component in the 18-neighborhood that
  touches a face of the center voxel.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import _accel
from .errors import TopologyError
from .voxelgrid import VoxelGrid

log = logging.getLogger(__name__)

# Neighborhood positions are flat indices into a 3x3x3 block:
# pos = (di + 1) * 9 + (dj + 1) * 3 + (dk + 1); the center is 13.
CENTER = 13


def _pos(di, dj, dk):
    return (di + 1) * 9 + (dj + 1) * 3 + (dk + 1)


def _offset(pos):
    return pos // 9 - 1, (pos // 3) % 3 - 1, pos % 3 - 1


def _build_tables():
    # 26-adjacency among the 26 neighbor positions.
    adj26 = np.full((27, 26), -1, dtype=np.int64)
    for p in range(27):
        if p == CENTER:
            continue
        a = _offset(p)
        n = 0
        for q in range(27):
            if q == CENTER or q == p:
                continue
            b = _offset(q)
            if max(abs(a[0] - b[0]), abs(a[1] - b[1]), abs(a[2] - b[2])) == 1:
                adj26[p, n] = q
                n += 1

    # 6-adjacency among the 18-neighborhood (no corners, no center).
    in18 = np.zeros(27, dtype=np.bool_)
    for p in range(27):
        if p != CENTER and sum(abs(x) for x in _offset(p)) <= 2:
            in18[p] = True
    adj6 = np.full((27, 6), -1, dtype=np.int64)
    for p in range(27):
        if not in18[p]:
            continue
        a = _offset(p)
        n = 0
        for q in range(27):
            if in18[q] and sum(abs(a[i] - _offset(q)[i]) for i in range(3)) == 1:
                adj6[p, n] = q
                n += 1
    faces = np.array([_pos(*d) for d in ((-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1))])

    # Octants: for signs (sx, sy, sz) the 7 positions with offsets in {0, s}^3 minus
    # the center. Bit order inside an octant: (sx,0,0), (0,sy,0), (0,0,sz),
    # (0,sy,sz), (sx,0,sz), (sx,sy,0), (sx,sy,sz).
    octants = np.zeros((8, 7), dtype=np.int64)
    for o, (sx, sy, sz) in enumerate([(a, b, c) for a in (-1, 1) for b in (-1, 1) for c in (-1, 1)]):
        octants[o] = [
            _pos(sx, 0, 0), _pos(0, sy, 0), _pos(0, 0, sz),
            _pos(0, sy, sz), _pos(sx, 0, sz), _pos(sx, sy, 0), _pos(sx, sy, sz),
        ]
    return adj26, in18, adj6, faces, octants


def euler_octant_lut() -> np.ndarray:
    """Octant table for the Euler-invariance test, scaled by 8 to stay integral.

    Removing the center cube deletes every cell of its closure not covered by
    another voxel, so the change is V - E + F - 1 over uncovered cells. Each
    octant owns its corner vertex fully, its 3 incident edges by halves, its 3
    incident faces by quarters and the cube by an eighth.
    """
    lut = np.zeros(128, dtype=np.int64)
    for idx in range(128):
        bit = [(idx >> b) & 1 for b in range(7)]
        fx, fy, fz, eyz, exz, exy, _ = bit
        vertex = 1 if idx == 0 else 0
        # The edge parallel to x through the octant corner is covered by
        # (0,sy,0), (0,0,sz), (0,sy,sz); likewise for y and z.
        edges = (fy | fz | eyz) == 0, (fx | fz | exz) == 0, (fx | fy | exy) == 0
        faces = fx == 0, fy == 0, fz == 0
        lut[idx] = 8 * vertex - 4 * sum(edges) + 2 * sum(faces) - 1
    return lut


ADJ26, IN18, ADJ6, FACES, OCTANTS = _build_tables()
EULER_LUT = euler_octant_lut()

# Direction order of the sub-passes.
DIRECTIONS = np.array([(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)], dtype=np.int64)


# ---------------------------------------------------------------------------
# Local tests on a 27-element neighborhood vector (written so numba can compile them)
# ---------------------------------------------------------------------------


def _euler_invariant(nb, octants, lut):
    total = 0
    for o in range(8):
        idx = 0
        for b in range(7):
            if nb[octants[o, b]]:
                idx |= 1 << b
        total += lut[idx]
    return total == 0


def _object_components(nb, adj26):
    seen = np.zeros(27, dtype=np.bool_)
    stack = np.empty(27, dtype=np.int64)
    count = 0
    for start in range(27):
        if start == 13 or not nb[start] or seen[start]:
            continue
        count += 1
        seen[start] = True
        top = 0
        stack[0] = start
        top = 1
        while top > 0:
            top -= 1
            p = stack[top]
            for n in range(26):
                q = adj26[p, n]
                if q < 0:
                    break
                if nb[q] and not seen[q]:
                    seen[q] = True
                    stack[top] = q
                    top += 1
    return count


def _background_components(nb, in18, adj6, faces):
    seen = np.zeros(27, dtype=np.bool_)
    stack = np.empty(27, dtype=np.int64)
    count = 0
    for f in range(6):
        start = faces[f]
        if nb[start] or seen[start]:
            continue
        count += 1
        seen[start] = True
        stack[0] = start
        top = 1
        while top > 0:
            top -= 1
            p = stack[top]
            for n in range(6):
                q = adj6[p, n]
                if q < 0:
                    break
                if in18[q] and not nb[q] and not seen[q]:
                    seen[q] = True
                    stack[top] = q
                    top += 1
    return count


def _make_simple(euler_invariant, object_components, background_components):
    def simple(nb, adj26, in18, adj6, faces, octants, lut):
        if not euler_invariant(nb, octants, lut):
            return False
        if object_components(nb, adj26) != 1:
            return False
        return background_components(nb, in18, adj6, faces) == 1

    return simple


_simple_nb = _make_simple(_euler_invariant, _object_components, _background_components)


def _gather(img, i, j, k, nb):
    n = 0
    for a in range(-1, 2):
        for b in range(-1, 2):
            for c in range(-1, 2):
                nb[n] = img[i + a, j + b, k + c] != 0
                n += 1


def _count26(img, i, j, k):
    n = 0
    for a in range(-1, 2):
        for b in range(-1, 2):
            for c in range(-1, 2):
                if img[i + a, j + b, k + c] != 0:
                    n += 1
    return n - 1


# ---------------------------------------------------------------------------
# numba kernel
# ---------------------------------------------------------------------------

_simple_nb_jit = _accel.njit(
    _make_simple(
        _accel.njit(_euler_invariant),
        _accel.njit(_object_components),
        _accel.njit(_background_components),
    )
)
_gather_jit = _accel.njit(_gather)
_count26_jit = _accel.njit(_count26)


@_accel.njit
def _thin_numba(img, coords, directions, adj26, in18, adj6, faces, octants, lut):
    """Thin a padded uint8 image in place. ``coords`` lists object voxels lexicographically."""
    nb = np.zeros(27, dtype=np.bool_)
    n_obj = coords.shape[0]
    cand = np.empty(n_obj, dtype=np.int64)
    alive = np.ones(n_obj, dtype=np.bool_)
    n_pass = 0
    while True:
        n_pass += 1
        deleted = 0
        for d in range(6):
            di, dj, dk = directions[d, 0], directions[d, 1], directions[d, 2]
            n_cand = 0
            for t in range(n_obj):
                if not alive[t]:
                    continue
                i, j, k = coords[t, 0], coords[t, 1], coords[t, 2]
                if img[i + di, j + dj, k + dk] != 0:
                    continue
                if _count26_jit(img, i, j, k) == 1:
                    continue
                _gather_jit(img, i, j, k, nb)
                if not _simple_nb_jit(nb, adj26, in18, adj6, faces, octants, lut):
                    continue
                cand[n_cand] = t
                n_cand += 1
            for c in range(n_cand):
                t = cand[c]
                i, j, k = coords[t, 0], coords[t, 1], coords[t, 2]
                _gather_jit(img, i, j, k, nb)
                if _simple_nb_jit(nb, adj26, in18, adj6, faces, octants, lut):
                    img[i, j, k] = 0
                    alive[t] = False
                    deleted += 1
        if deleted == 0:
            break
    return n_pass


# ---------------------------------------------------------------------------
# numpy fallback: vectorized candidate screening, python re-validation
# ---------------------------------------------------------------------------


def _simple_py(img, i, j, k):
    nb = img[i - 1:i + 2, j - 1:j + 2, k - 1:k + 2].ravel() != 0
    return _simple_nb(nb, ADJ26, IN18, ADJ6, FACES, OCTANTS, EULER_LUT)


def _thin_numpy(img):
    n_pass = 0
    ones = np.ones((3, 3, 3), dtype=np.int32)
    while True:
        n_pass += 1
        deleted = 0
        for di, dj, dk in DIRECTIONS:
            obj = img != 0
            count = ndimage.correlate(obj.astype(np.int32), ones, mode="constant") - 1
            shifted = np.roll(obj, shift=(-di, -dj, -dk), axis=(0, 1, 2))
            screen = obj & ~shifted & (count != 1)
            candidates = [tuple(v) for v in np.argwhere(screen) if _simple_py(img, *v)]
            for i, j, k in candidates:
                if _simple_py(img, i, j, k):
                    img[i, j, k] = 0
                    deleted += 1
        if deleted == 0:
            return n_pass


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SkeletonMask:
    """Skeleton voxels of a grid, with the source grid's dims and resolution."""

    mask: np.ndarray
    resolution: tuple[float, float, float]

    @property
    def dims(self):
        return tuple(int(n) for n in self.mask.shape)

    @property
    def n_points(self) -> int:
        return int(np.count_nonzero(self.mask))

    def points(self) -> np.ndarray:
        """Skeleton voxel coordinates, lexicographic (i, j, k)."""
        return np.argwhere(self.mask)

    def as_grid(self) -> VoxelGrid:
        return VoxelGrid(self.mask, self.resolution)


def _as_grid(grid) -> VoxelGrid:
    if isinstance(grid, SkeletonMask):
        return grid.as_grid()
    if isinstance(grid, VoxelGrid):
        return grid
    return VoxelGrid(np.asarray(grid, dtype=bool))


def is_simple_point(grid, v) -> bool:
    """True iff deleting pore voxel ``v`` preserves local topology (26/6)."""
    grid = _as_grid(grid)
    i, j, k = (int(x) for x in v)
    nx, ny, nz = grid.dims
    if not (0 <= i < nx and 0 <= j < ny and 0 <= k < nz) or not grid.occupancy[i, j, k]:
        raise ValueError(f"voxel {(i, j, k)} is not a pore voxel")
    img = np.pad(grid.occupancy, 1).astype(np.uint8)
    return bool(_simple_py(img, i + 1, j + 1, k + 1))


def thin(grid, backend: str | None = None) -> SkeletonMask:
    """Iterate directional deletion of simple border voxels to the fixed point."""
    grid = _as_grid(grid)
    backend = _accel.resolve_backend(backend)
    img = np.pad(grid.occupancy, 1).astype(np.uint8)
    if backend == "numba":
        coords = np.argwhere(img).astype(np.int64)
        n_pass = _thin_numba(img, coords, DIRECTIONS, ADJ26, IN18, ADJ6, FACES, OCTANTS, EULER_LUT)
    else:
        n_pass = _thin_numpy(img)
    mask = img[1:-1, 1:-1, 1:-1] != 0
    if not np.all(mask <= grid.occupancy):
        raise TopologyError("skeleton escaped the pore space")
    log.info("thinning: %d passes, %d -> %d voxels (%s)", n_pass, grid.n_pore, int(mask.sum()), backend)
    return SkeletonMask(mask, grid.resolution)


def save_points_csv(skel: SkeletonMask, path) -> None:
    pts = skel.points()
    with open(path, "w") as fh:
        fh.write("i,j,k\n")
        for i, j, k in pts:
            fh.write(f"{i},{j},{k}\n")
