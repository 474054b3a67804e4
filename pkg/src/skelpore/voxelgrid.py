"""Dense 3D binary volumes: RAW I/O, 26-neighborhood queries, topology numbers
and synthetic test shapes.

Arrays are indexed ``occupancy[i, j, k]`` with ``i`` along x. On disk the
linearization is x-fastest (Fortran order over ``(nx, ny, nz)``), one byte per
voxel, nonzero meaning pore. Outside the grid counts as non-pore everywhere.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import BoundsError, FormatError, InputOutputError, SizeMismatchError

ORDER = "x-fastest"
STRUCT26 = np.ones((3, 3, 3), dtype=bool)
STRUCT6 = ndimage.generate_binary_structure(3, 1)

# Offsets of the 26 lattice neighbors, lexicographic in (di, dj, dk).
OFFSETS26 = np.array(
    [(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1) if (a, b, c) != (0, 0, 0)],
    dtype=np.int64,
)
# Half of them: one representative per +/- pair, used for one-pass scans.
FORWARD13 = OFFSETS26[13:]


@dataclass(frozen=True)
class VoxelGrid:
    """Binary pore volume with physical voxel size in micrometers."""

    occupancy: np.ndarray
    resolution: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        occ = np.asarray(self.occupancy)
        if occ.ndim != 3 or min(occ.shape) < 1:
            raise ValueError(f"occupancy must be a non-empty 3D array, got shape {occ.shape}")
        occ = occ.astype(bool, copy=True)
        occ.setflags(write=False)
        res = tuple(float(r) for r in self.resolution)
        if len(res) != 3 or not all(r > 0 and math.isfinite(r) for r in res):
            raise ValueError(f"resolution must be three positive numbers, got {self.resolution}")
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "resolution", res)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.occupancy.shape)

    @property
    def n_pore(self) -> int:
        return int(np.count_nonzero(self.occupancy))

    @property
    def porosity(self) -> float:
        return self.n_pore / self.occupancy.size

    @property
    def voxel_volume(self) -> float:
        rx, ry, rz = self.resolution
        return rx * ry * rz

    @property
    def is_anisotropic(self) -> bool:
        return len(set(self.resolution)) > 1

    def __eq__(self, other):
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return self.resolution == other.resolution and np.array_equal(self.occupancy, other.occupancy)

    __hash__ = None


# ---------------------------------------------------------------------------
# Sidecar metadata and RAW files
# ---------------------------------------------------------------------------


def meta_path_for(path) -> Path:
    return Path(str(path) + ".meta")


def read_meta(path) -> dict:
    """Parse a ``key=value`` sidecar file. Values are JSON literals."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise FormatError(f"metadata file not found: {path}") from None
    except OSError as exc:
        raise FormatError(f"cannot read metadata {path}: {exc}") from exc
    meta = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        try:
            meta[key.strip()] = json.loads(value.strip())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{lineno}: bad value for {key.strip()!r}: {exc}") from None
    for key in ("dims", "resolution_um", "encoding"):
        if key not in meta:
            raise FormatError(f"{path}: missing field {key!r}")
    dims, res = meta["dims"], meta["resolution_um"]
    if not (isinstance(dims, list) and len(dims) == 3 and all(isinstance(d, int) and d >= 1 for d in dims)):
        raise FormatError(f"{path}: dims must be three positive integers, got {dims!r}")
    if not (isinstance(res, list) and len(res) == 3 and all(isinstance(r, (int, float)) and r > 0 for r in res)):
        raise FormatError(f"{path}: resolution_um must be three positive numbers, got {res!r}")
    if meta["encoding"] not in ("u8", "u32"):
        raise FormatError(f"{path}: unsupported encoding {meta['encoding']!r}")
    if meta.get("order", ORDER) != ORDER:
        raise FormatError(f"{path}: unsupported order {meta['order']!r}")
    return meta


def write_meta(path, dims, resolution, encoding: str) -> None:
    dims = [int(d) for d in dims]
    res = [float(r) for r in resolution]
    Path(path).write_text(
        f"dims={json.dumps(dims)}\n"
        f"resolution_um={json.dumps(res)}\n"
        f'encoding="{encoding}"\n'
        f'order="{ORDER}"\n'
    )


_DTYPES = {"u8": np.dtype("u1"), "u32": np.dtype("<u4")}


def _read_raw_array(path, meta: dict) -> np.ndarray:
    dtype = _DTYPES[meta["encoding"]]
    nx, ny, nz = meta["dims"]
    try:
        data = np.fromfile(path, dtype=np.uint8)
    except FileNotFoundError:
        raise InputOutputError(f"volume file not found: {path}") from None
    except OSError as exc:
        raise InputOutputError(f"cannot read {path}: {exc}") from exc
    expected = nx * ny * nz * dtype.itemsize
    if data.size != expected:
        raise SizeMismatchError(
            f"{path}: file has {data.size} bytes, dims {nx}x{ny}x{nz} "
            f"with encoding {meta['encoding']} need {expected}"
        )
    return data.view(dtype).reshape((nx, ny, nz), order="F")


def load_raw(path, meta=None) -> VoxelGrid:
    """Load a headerless u8 volume. ``meta`` defaults to ``<path>.meta``."""
    meta = read_meta(meta_path_for(path) if meta is None else meta)
    if meta["encoding"] != "u8":
        raise FormatError(f"volume must use encoding u8, metadata says {meta['encoding']!r}")
    arr = _read_raw_array(path, meta)
    return VoxelGrid(arr != 0, tuple(meta["resolution_um"]))


def save_raw(grid: VoxelGrid, path) -> None:
    np.asfortranarray(grid.occupancy.astype(np.uint8)).ravel(order="F").tofile(path)
    write_meta(meta_path_for(path), grid.dims, grid.resolution, "u8")


def save_label_raw(labels: np.ndarray, path, resolution) -> None:
    """Write a 32-bit unsigned label image (0 = non-pore) plus its sidecar."""
    labels = np.asarray(labels)
    if labels.ndim != 3:
        raise ValueError("label image must be 3D")
    if labels.size and (labels.min() < 0 or labels.max() > np.iinfo(np.uint32).max):
        raise ValueError("labels out of u32 range")
    labels.astype("<u4").ravel(order="F").tofile(path)
    write_meta(meta_path_for(path), labels.shape, resolution, "u32")


def load_label_raw(path, meta=None) -> tuple[np.ndarray, tuple[float, float, float]]:
    meta = read_meta(meta_path_for(path) if meta is None else meta)
    if meta["encoding"] != "u32":
        raise FormatError(f"label image must use encoding u32, metadata says {meta['encoding']!r}")
    arr = _read_raw_array(path, meta).astype(np.uint32)
    return arr, tuple(float(r) for r in meta["resolution_um"])


# ---------------------------------------------------------------------------
# Neighborhood queries
# ---------------------------------------------------------------------------


def _check_inside(grid: VoxelGrid, v) -> tuple[int, int, int]:
    i, j, k = (int(x) for x in v)
    nx, ny, nz = grid.dims
    if not (0 <= i < nx and 0 <= j < ny and 0 <= k < nz):
        raise BoundsError(f"voxel {(i, j, k)} outside grid {grid.dims}")
    return i, j, k


def neighbors26(grid: VoxelGrid, v) -> list[tuple[int, int, int]]:
    """In-bounds pore voxels among the 26 lattice neighbors of ``v``."""
    i, j, k = _check_inside(grid, v)
    nx, ny, nz = grid.dims
    occ = grid.occupancy
    out = []
    for di, dj, dk in OFFSETS26:
        a, b, c = i + di, j + dj, k + dk
        if 0 <= a < nx and 0 <= b < ny and 0 <= c < nz and occ[a, b, c]:
            out.append((int(a), int(b), int(c)))
    return out


def connected_components(grid_or_mask) -> tuple[np.ndarray, int]:
    """Label 26-connected pore components 1..n in C scan order (0 = non-pore)."""
    mask = grid_or_mask.occupancy if isinstance(grid_or_mask, VoxelGrid) else np.asarray(grid_or_mask, bool)
    labels, n = ndimage.label(mask, structure=STRUCT26)
    return labels.astype(np.int32), int(n)


def border_mask(grid_or_mask) -> np.ndarray:
    """Pore voxels with at least one 26-neighbor outside S (grid edge included)."""
    mask = grid_or_mask.occupancy if isinstance(grid_or_mask, VoxelGrid) else np.asarray(grid_or_mask, bool)
    interior = ndimage.binary_erosion(mask, structure=STRUCT26, border_value=0)
    return mask & ~interior


def euler_characteristic(mask) -> int:
    """Euler characteristic of the union of closed unit cubes (26/6 topology).

    Counts the vertices, edges, faces and cubes of the cubical complex. This is
    a global computation and shares nothing with the local simple-point test.
    """
    m = np.pad(np.asarray(mask, dtype=bool), 1)
    # Each cell is present iff any voxel incident to it is present.
    # Vertices: 8 incident voxels; edges: 4; faces: 2.
    v = m[:-1, :-1, :-1] | m[1:, :-1, :-1] | m[:-1, 1:, :-1] | m[:-1, :-1, 1:]
    v |= m[1:, 1:, :-1] | m[1:, :-1, 1:] | m[:-1, 1:, 1:] | m[1:, 1:, 1:]
    ex = m[:, :-1, :-1] | m[:, 1:, :-1] | m[:, :-1, 1:] | m[:, 1:, 1:]
    ey = m[:-1, :, :-1] | m[1:, :, :-1] | m[:-1, :, 1:] | m[1:, :, 1:]
    ez = m[:-1, :-1, :] | m[1:, :-1, :] | m[:-1, 1:, :] | m[1:, 1:, :]
    fx = m[:-1, :, :] | m[1:, :, :]
    fy = m[:, :-1, :] | m[:, 1:, :]
    fz = m[:, :, :-1] | m[:, :, 1:]
    n_v = int(v.sum())
    n_e = int(ex.sum() + ey.sum() + ez.sum())
    n_f = int(fx.sum() + fy.sum() + fz.sum())
    return n_v - n_e + n_f - int(m.sum())


def topology_numbers(mask) -> tuple[int, int, int]:
    """Betti numbers (components, tunnels, cavities) with 26-connected foreground."""
    m = np.asarray(mask, dtype=bool)
    _, b0 = ndimage.label(m, structure=STRUCT26)
    _, n_bg = ndimage.label(~np.pad(m, 1), structure=STRUCT6)
    b2 = n_bg - 1
    b1 = b0 + b2 - euler_characteristic(m)
    return int(b0), int(b1), int(b2)


# ---------------------------------------------------------------------------
# Synthetic shapes
# ---------------------------------------------------------------------------

SHAPES = ("cylinder", "torus", "L-tube", "cube-with-hole", "y-tube", "box")


def _centers(dims, center):
    """Voxel-center coordinates relative to ``center`` (voxel units)."""
    if center is None:
        center = tuple(n // 2 + 0.5 for n in dims)
    axes = [np.arange(n) + 0.5 - c for n, c in zip(dims, center)]
    return np.meshgrid(*axes, indexing="ij"), np.asarray(center, dtype=float)


def _check_bbox(dims, center, lo, hi, kind):
    for n, c, a, b in zip(dims, center, lo, hi):
        if c + a < 0 or c + b > n:
            raise BoundsError(f"{kind} with these parameters does not fit in grid {tuple(dims)}")


def _segment_distance(x, y, z, p, q):
    """Distance from points to segment pq."""
    p, q = np.asarray(p, float), np.asarray(q, float)
    d = q - p
    t = ((x - p[0]) * d[0] + (y - p[1]) * d[1] + (z - p[2]) * d[2]) / float(d @ d)
    t = np.clip(t, 0.0, 1.0)
    return np.sqrt((x - p[0] - t * d[0]) ** 2 + (y - p[1] - t * d[1]) ** 2 + (z - p[2] - t * d[2]) ** 2)


def make_shape(kind: str, dims=(64, 64, 64), resolution=(1.0, 1.0, 1.0), center=None, **params) -> VoxelGrid:
    """Voxelize an analytic shape: a voxel is pore iff its center is inside.

    Lengths are in voxel units. Kinds and their parameters:

    - ``cylinder``: radius, length (axis along z)
    - ``torus``: major, minor (axis along z)
    - ``L-tube``: radius, arm (two arms along +x and +y from a shared corner)
    - ``cube-with-hole``: side, hole (cylindrical through-hole along z)
    - ``y-tube``: radius, arm (three coplanar arms at 120 degrees)
    - ``box``: size=(sx, sy, sz)
    """
    dims = tuple(int(n) for n in dims)
    (x, y, z), c = _centers(dims, center)

    def positive(name):
        value = float(params[name])
        if not value > 0:
            raise ValueError(f"{kind}: {name} must be > 0, got {value}")
        return value

    if kind == "cylinder":
        r, length = positive("radius"), positive("length")
        _check_bbox(dims, c, (-r, -r, -length / 2), (r, r, length / 2), kind)
        inside = (x * x + y * y <= r * r) & (z >= -length / 2) & (z < length / 2)
    elif kind == "torus":
        big, small = positive("major"), positive("minor")
        if small >= big:
            raise ValueError("torus: minor radius must be smaller than major radius")
        ext = big + small
        _check_bbox(dims, c, (-ext, -ext, -small), (ext, ext, small), kind)
        inside = (np.sqrt(x * x + y * y) - big) ** 2 + z * z <= small * small
    elif kind == "L-tube":
        r, arm = positive("radius"), positive("arm")
        corner = (-arm / 2, -arm / 2, 0.0)
        _check_bbox(dims, c, (corner[0] - r, corner[1] - r, -r), (arm / 2 + r, arm / 2 + r, r), kind)
        d = np.minimum(
            _segment_distance(x, y, z, corner, (arm / 2, -arm / 2, 0.0)),
            _segment_distance(x, y, z, corner, (-arm / 2, arm / 2, 0.0)),
        )
        inside = d <= r
    elif kind == "cube-with-hole":
        side, hole = positive("side"), positive("hole")
        if hole >= side / 2:
            raise ValueError("cube-with-hole: hole radius must be below half the side")
        h = side / 2
        _check_bbox(dims, c, (-h, -h, -h), (h, h, h), kind)
        inside = (np.abs(x) < h) & (np.abs(y) < h) & (np.abs(z) < h) & (x * x + y * y > hole * hole)
    elif kind == "y-tube":
        r, arm = positive("radius"), positive("arm")
        ends = [(arm * math.cos(a), arm * math.sin(a), 0.0) for a in (math.pi / 2, 7 * math.pi / 6, 11 * math.pi / 6)]
        lo = tuple(min(e[i] for e in ends) - r for i in range(2)) + (-r,)
        hi = tuple(max(e[i] for e in ends) + r for i in range(2)) + (r,)
        _check_bbox(dims, c, lo, hi, kind)
        d = np.min([_segment_distance(x, y, z, (0.0, 0.0, 0.0), e) for e in ends], axis=0)
        inside = d <= r
    elif kind == "box":
        size = [float(s) for s in params["size"]]
        if min(size) <= 0:
            raise ValueError(f"box: sizes must be > 0, got {size}")
        half = [s / 2 for s in size]
        _check_bbox(dims, c, [-h for h in half], half, kind)
        inside = (x >= -half[0]) & (x < half[0]) & (y >= -half[1]) & (y < half[1]) & (z >= -half[2]) & (z < half[2])
    else:
        raise ValueError(f"unknown shape {kind!r}; choose from {SHAPES}")
    return VoxelGrid(inside, resolution)


def make_porous(dims=(64, 64, 64), porosity: float = 0.3, smoothing: float = 2.0, seed: int = 0,
                resolution=(1.0, 1.0, 1.0)) -> VoxelGrid:
    """Random pore space: smoothed Gaussian noise thresholded at the target porosity.

    Deterministic for a given seed. ``smoothing`` is the Gaussian sigma in
    voxels and sets the typical pore size.
    """
    if not 0 < porosity < 1:
        raise ValueError("porosity must be in (0, 1)")
    rng = np.random.default_rng(seed)
    field = ndimage.gaussian_filter(rng.standard_normal(tuple(int(n) for n in dims)), smoothing, mode="wrap")
    cut = np.quantile(field, 1.0 - porosity)
    return VoxelGrid(field > cut, resolution)
