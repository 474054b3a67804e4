"""Region adjacency graph with contact areas and centroid distances.

Arcs come from a single pass over the label image: each pore voxel looks at
its three forward face neighbors (i+1, j, k), (i, j+1, k), (i, j, k+1); a
neighbor with a different nonzero label contributes one surfel to that pair.
Only face contacts count, so regions touching along an edge or a corner only
are not linked.

Contact area is the surfel count times the face area for that orientation
(ry*rz for x-faces, rx*rz for y-faces, rx*ry for z-faces). The arc length is
the distance between region centroids, which may lie outside a bent region.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .errors import FormatError, InputOutputError, TopologyError
from .partition import Partition

NETWORK_FORMAT = "skelpore-network"
NETWORK_VERSION = 1


@dataclass(frozen=True)
class PoreNetwork:
    """Nodes are regions 1..N stored at index 0..N-1; arcs are stored once with i < j."""

    volume: np.ndarray  # (N,) um^3
    centroid: np.ndarray  # (N, 3) um
    arc_i: np.ndarray  # (A,) node indices, 0-based
    arc_j: np.ndarray
    area: np.ndarray  # (A,) um^2
    distance: np.ndarray  # (A,) um
    resolution: tuple[float, float, float] = (1.0, 1.0, 1.0)
    surfels: np.ndarray | None = field(default=None, compare=False)  # (A, 3) per-orientation counts
    source: str = ""

    @property
    def n_nodes(self) -> int:
        return int(self.volume.shape[0])

    @property
    def n_arcs(self) -> int:
        return int(self.arc_i.shape[0])

    def degree(self) -> np.ndarray:
        return np.bincount(np.r_[self.arc_i, self.arc_j], minlength=self.n_nodes)

    def validate(self) -> None:
        if np.any(self.arc_i == self.arc_j):
            raise TopologyError("self-loop in pore network")
        if np.any(self.arc_i > self.arc_j):
            raise TopologyError("arcs must be stored with i < j")
        if np.any(self.area <= 0):
            raise TopologyError("non-positive contact area")
        if np.any(self.distance <= 0):
            bad = np.flatnonzero(self.distance <= 0)[0]
            raise TopologyError(
                f"regions {self.arc_i[bad] + 1} and {self.arc_j[bad] + 1} are adjacent but have "
                "coincident centroids; the centroid distance would be zero"
            )


@_accel.njit
def _surfels_numba(labels):
    nx, ny, nz = labels.shape
    cap = 3 * labels.size
    out_a = np.empty(cap, dtype=np.int64)
    out_b = np.empty(cap, dtype=np.int64)
    out_axis = np.empty(cap, dtype=np.int64)
    n = 0
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                a = labels[i, j, k]
                if a == 0:
                    continue
                for axis in range(3):
                    ii, jj, kk = i, j, k
                    if axis == 0:
                        ii += 1
                    elif axis == 1:
                        jj += 1
                    else:
                        kk += 1
                    if ii >= nx or jj >= ny or kk >= nz:
                        continue
                    b = labels[ii, jj, kk]
                    if b == 0 or b == a:
                        continue
                    out_a[n] = min(a, b)
                    out_b[n] = max(a, b)
                    out_axis[n] = axis
                    n += 1
    return out_a[:n], out_b[:n], out_axis[:n]


def _surfels_numpy(labels):
    As, Bs, axes = [], [], []
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        a, b = labels[tuple(lo)], labels[tuple(hi)]
        hit = (a != 0) & (b != 0) & (a != b)
        a, b = a[hit], b[hit]
        As.append(np.minimum(a, b))
        Bs.append(np.maximum(a, b))
        axes.append(np.full(a.size, axis))
    return np.concatenate(As), np.concatenate(Bs), np.concatenate(axes)


def surfel_counts(labels: np.ndarray, backend: str | None = None):
    """Unique label pairs (a < b) and their surfel counts per face orientation.

    Returns ``(pairs, counts)`` with ``pairs`` of shape (A, 2) holding labels
    and ``counts`` of shape (A, 3) for x-, y- and z-faces.
    """
    backend = _accel.resolve_backend(backend)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    run = _surfels_numba if backend == "numba" else _surfels_numpy
    a, b, axis = run(labels)
    n = int(labels.max()) + 1 if labels.size else 1
    key = a * n + b
    uniq, inverse = np.unique(key, return_inverse=True)
    counts = np.zeros((uniq.size, 3), dtype=np.int64)
    np.add.at(counts, (inverse, axis), 1)
    pairs = np.stack([uniq // n, uniq % n], axis=1)
    return pairs, counts


def build_network(partition: Partition, backend: str | None = None, source: str = "") -> PoreNetwork:
    """Region adjacency graph from the label image of ``partition``."""
    pairs, counts = surfel_counts(partition.label_image, backend=backend)
    rx, ry, rz = partition.resolution
    face = np.array([ry * rz, rx * rz, rx * ry])
    area = counts @ face
    i, j = pairs[:, 0] - 1, pairs[:, 1] - 1
    c = partition.centroid
    dist = np.sqrt(((c[i] - c[j]) ** 2).sum(axis=1))
    net = PoreNetwork(
        volume=partition.volume.astype(float),
        centroid=c.copy(),
        arc_i=i,
        arc_j=j,
        area=area.astype(float),
        distance=dist,
        resolution=partition.resolution,
        surfels=counts,
        source=source,
    )
    net.validate()
    return net


def network_stats(net: PoreNetwork) -> dict:
    """Node and arc counts, mean degree, volume-weighted degree and total volume."""
    n, a = net.n_nodes, net.n_arcs
    if n == 0:
        return {"nodes": 0, "arcs": 0, "mean_degree": 0.0, "volume_weighted_degree": 0.0, "total_volume_um3": 0.0}
    deg = net.degree()
    total = float(net.volume.sum())
    return {
        "nodes": n,
        "arcs": a,
        "mean_degree": 2.0 * a / n,
        "volume_weighted_degree": float((deg * net.volume).sum() / total) if total > 0 else 0.0,
        "total_volume_um3": total,
    }


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def save_network(net: PoreNetwork, path) -> None:
    """Single self-describing JSON file (format name + version)."""
    doc = {
        "format": NETWORK_FORMAT,
        "version": NETWORK_VERSION,
        "units": {"length": "um", "area": "um2", "volume": "um3"},
        "resolution_um": list(net.resolution),
        "source": net.source,
        "nodes": {
            "id": list(range(1, net.n_nodes + 1)),
            "volume_um3": net.volume.tolist(),
            "cx": net.centroid[:, 0].tolist(),
            "cy": net.centroid[:, 1].tolist(),
            "cz": net.centroid[:, 2].tolist(),
        },
        "arcs": {
            "i": (net.arc_i + 1).tolist(),
            "j": (net.arc_j + 1).tolist(),
            "area_um2": net.area.tolist(),
            "dist_um": net.distance.tolist(),
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_network(path) -> PoreNetwork:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise InputOutputError(f"network file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not a network file: {exc}") from None
    if doc.get("format") != NETWORK_FORMAT:
        raise FormatError(f"{path}: format is {doc.get('format')!r}, expected {NETWORK_FORMAT!r}")
    if doc.get("version") != NETWORK_VERSION:
        raise FormatError(f"{path}: unsupported network version {doc.get('version')!r}")
    try:
        nodes, arcs = doc["nodes"], doc["arcs"]
        net = PoreNetwork(
            volume=np.asarray(nodes["volume_um3"], dtype=float),
            centroid=np.column_stack([nodes["cx"], nodes["cy"], nodes["cz"]]).astype(float).reshape(-1, 3),
            arc_i=np.asarray(arcs["i"], dtype=np.int64) - 1,
            arc_j=np.asarray(arcs["j"], dtype=np.int64) - 1,
            area=np.asarray(arcs["area_um2"], dtype=float),
            distance=np.asarray(arcs["dist_um"], dtype=float),
            resolution=tuple(float(r) for r in doc["resolution_um"]),
            source=doc.get("source", ""),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed network file: {exc}") from None
    if np.any(net.arc_i < 0) or np.any(net.arc_j >= net.n_nodes):
        raise FormatError(f"{path}: arc refers to a missing node")
    net.validate()
    return net


def save_network_csv(net: PoreNetwork, nodes_path, arcs_path) -> None:
    with open(nodes_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "volume_um3", "cx", "cy", "cz"])
        for n in range(net.n_nodes):
            w.writerow([n + 1, repr(float(net.volume[n]))] + [repr(float(x)) for x in net.centroid[n]])
    with open(arcs_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "area_um2", "dist_um"])
        for a in range(net.n_arcs):
            w.writerow([net.arc_i[a] + 1, net.arc_j[a] + 1, repr(float(net.area[a])), repr(float(net.distance[a]))])
