"""Diffusion on the pore network.

Per arc the exchange coefficient is ``theta_ij = alpha * D_c * s_ij / d_ij * dt``
(um^3 per step). With node volumes ``v`` the implicit step solves

    M c_new = diag(v) c_old,   M_ii = v_i + sum_j theta_ij,   M_ij = -theta_ij,

which is symmetric positive definite; it is solved by Jacobi-preconditioned
conjugate gradient. Column sums of M equal v, so total mass sum(v * c) is
conserved up to the solver tolerance. The explicit step is

    c_new_i = ((v_i - sum_j theta_ij) c_i + sum_j theta_ij c_j) / v_i

and is only valid while every ``v_i - sum_j theta_ij`` stays nonnegative.

Units: micrometers and hours throughout.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from . import _accel
from .errors import CalibrationError, SolverError, StabilityError, TopologyError
from .partition import Partition
from .poregraph import PoreNetwork

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.35
CG_RTOL = 1e-14
CG_ACCEPT = 1e-10  # residual still accepted (with a warning) when rtol is not reached
CG_MAXITER_FACTOR = 10


def cm2_per_s_to_um2_per_h(d: float) -> float:
    return d * 1e8 * 3600.0


def um2_per_h_to_cm2_per_s(d: float) -> float:
    return d / (1e8 * 3600.0)


@dataclass(frozen=True)
class DiffusionParams:
    """Diffusion coefficient (um^2/h), step (h) and overall conductance."""

    D_c: float
    dt: float
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if not self.D_c > 0:
            raise ValueError(f"D_c must be > 0, got {self.D_c}")
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")

    @classmethod
    def from_cm2_per_s(cls, d_cm2_s: float, dt: float, alpha: float = DEFAULT_ALPHA):
        return cls(cm2_per_s_to_um2_per_h(d_cm2_s), dt, alpha)


def build_conductances(net: PoreNetwork, params: DiffusionParams) -> np.ndarray:
    """theta per arc, in um^3 (volume exchanged per step)."""
    if np.any(net.distance <= 0):
        raise TopologyError("arc with zero centroid distance")
    return params.alpha * params.D_c * net.area / net.distance * params.dt


def max_stable_dt(net: PoreNetwork, D_c: float, alpha: float = DEFAULT_ALPHA) -> float:
    """Largest dt keeping every explicit self-weight nonnegative (inf without arcs)."""
    g = net.area / net.distance
    per_node = np.bincount(net.arc_i, g, net.n_nodes) + np.bincount(net.arc_j, g, net.n_nodes)
    rate = alpha * D_c * per_node
    active = rate > 0
    if not active.any():
        return math.inf
    return float(np.min(net.volume[active] / rate[active]))


# ---------------------------------------------------------------------------
# Preconditioned conjugate gradient on CSR
# ---------------------------------------------------------------------------


@_accel.njit
def _pcg_numba(indptr, indices, data, diag, b, x, rtol, maxiter):
    n = b.shape[0]
    r = np.empty(n)
    z = np.empty(n)
    p = np.empty(n)
    ap = np.empty(n)
    bnorm = 0.0
    for i in range(n):
        bnorm += b[i] * b[i]
    bnorm = math.sqrt(bnorm)
    if bnorm == 0.0:
        for i in range(n):
            x[i] = 0.0
        return 0, 0.0
    for i in range(n):
        s = 0.0
        for t in range(indptr[i], indptr[i + 1]):
            s += data[t] * x[indices[t]]
        r[i] = b[i] - s
    rz = 0.0
    rr = 0.0
    for i in range(n):
        z[i] = r[i] / diag[i]
        p[i] = z[i]
        rz += r[i] * z[i]
        rr += r[i] * r[i]
    it = 0
    while math.sqrt(rr) > rtol * bnorm and it < maxiter:
        pap = 0.0
        for i in range(n):
            s = 0.0
            for t in range(indptr[i], indptr[i + 1]):
                s += data[t] * p[indices[t]]
            ap[i] = s
            pap += p[i] * s
        if pap <= 0.0:
            break
        step = rz / pap
        rz_new = 0.0
        rr = 0.0
        for i in range(n):
            x[i] += step * p[i]
            r[i] -= step * ap[i]
            z[i] = r[i] / diag[i]
            rz_new += r[i] * z[i]
            rr += r[i] * r[i]
        beta = rz_new / rz
        rz = rz_new
        for i in range(n):
            p[i] = z[i] + beta * p[i]
        it += 1
    return it, math.sqrt(rr) / bnorm


def _pcg_numpy(mat, diag, b, x, rtol, maxiter):
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        x[:] = 0.0
        return 0, 0.0
    r = b - mat @ x
    z = r / diag
    p = z.copy()
    rz = float(r @ z)
    rr = float(r @ r)
    it = 0
    while math.sqrt(rr) > rtol * bnorm and it < maxiter:
        ap = mat @ p
        pap = float(p @ ap)
        if pap <= 0.0:
            break
        step = rz / pap
        x += step * p
        r -= step * ap
        z = r / diag
        rz_new = float(r @ z)
        rr = float(r @ r)
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
    return it, math.sqrt(rr) / bnorm


@dataclass
class SolveStats:
    steps: int = 0
    iterations: int = 0
    max_iterations: int = 0
    max_residual: float = 0.0
    log: list = field(default_factory=list)

    def record(self, it: int, res: float, keep_log: bool = False):
        self.steps += 1
        self.iterations += it
        self.max_iterations = max(self.max_iterations, it)
        self.max_residual = max(self.max_residual, res)
        if keep_log:
            self.log.append((it, res))


class Diffuser:
    """Precomputed implicit / explicit operators for one network and one theta.

    ``set_theta`` swaps the conductances without rebuilding the sparsity
    pattern, which is how the alpha scan reuses a single operator.
    """

    def __init__(self, net: PoreNetwork, theta: np.ndarray, backend: str | None = None,
                 rtol: float = CG_RTOL, keep_log: bool = False):
        self.net = net
        self.backend = _accel.resolve_backend(backend)
        self.rtol = rtol
        self.v = np.asarray(net.volume, dtype=float)
        if np.any(self.v <= 0):
            raise TopologyError("node volumes must be positive")
        self.stats = SolveStats()
        self.keep_log = keep_log
        n = net.n_nodes
        i, j = net.arc_i, net.arc_j
        rows = np.r_[i, j, np.arange(n)]
        cols = np.r_[j, i, np.arange(n)]
        # Two aligned data vectors: volumes on the diagonal, and the theta Laplacian.
        ones = np.r_[np.zeros(2 * len(i)), np.ones(n)]
        pattern = sparse.csr_matrix((np.arange(1, len(rows) + 1, dtype=float), (rows, cols)), shape=(n, n))
        pattern.sort_indices()
        slot = pattern.data.astype(np.int64) - 1
        self._indptr = pattern.indptr.astype(np.int64)
        self._indices = pattern.indices.astype(np.int64)
        self._vol_data = np.where(ones[slot] > 0, self.v[rows[slot]], 0.0)
        self._rows, self._cols, self._slot = rows, cols, slot
        self.set_theta(theta)

    def set_theta(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.net.n_arcs,):
            raise ValueError("theta must have one entry per arc")
        if np.any(theta < 0):
            raise ValueError("theta must be nonnegative")
        n = self.net.n_nodes
        i, j = self.net.arc_i, self.net.arc_j
        self.theta = theta
        self.theta_sum = np.bincount(i, theta, n) + np.bincount(j, theta, n)
        lap = np.r_[-theta, -theta, self.theta_sum]
        self._lap_data = lap[self._slot]
        self._data = self._vol_data + self._lap_data
        self._diag = self.v + self.theta_sum
        self._mat = sparse.csr_matrix((self._data, self._indices, self._indptr), shape=(n, n))

    def matrix(self) -> sparse.csr_matrix:
        return self._mat

    def implicit(self, c: np.ndarray) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        b = self.v * c
        x = c.copy()
        maxiter = CG_MAXITER_FACTOR * max(1, self.net.n_nodes)
        if self.backend == "numba":
            it, res = _pcg_numba(self._indptr, self._indices, self._data, self._diag, b, x, self.rtol, maxiter)
        else:
            it, res = _pcg_numpy(self._mat, self._diag, b, x, self.rtol, maxiter)
        if res > max(self.rtol, CG_ACCEPT):
            raise SolverError(f"conjugate gradient did not converge: relative residual {res:.3e} after {it} iterations")
        if res > self.rtol:
            log.warning("conjugate gradient stopped at relative residual %.3e (target %.1e)", res, self.rtol)
        self.stats.record(it, res, self.keep_log)
        return x

    def explicit(self, c: np.ndarray) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        self_weight = self.v - self.theta_sum
        if np.any(self_weight < 0):
            worst = int(np.argmin(self_weight / self.v))
            raise StabilityError(
                f"explicit step unstable at node {worst + 1}: v - sum(theta) = {self_weight[worst]:.6g} < 0; "
                "reduce the step time"
            )
        i, j = self.net.arc_i, self.net.arc_j
        flux = self.theta * (c[j] - c[i])
        n = self.net.n_nodes
        dm = np.bincount(i, flux, n) - np.bincount(j, flux, n)
        return (self.v * c + dm) / self.v


def step_implicit(c, net: PoreNetwork, theta, backend: str | None = None) -> np.ndarray:
    return Diffuser(net, theta, backend=backend).implicit(c)


def step_explicit(c, net: PoreNetwork, theta) -> np.ndarray:
    return Diffuser(net, theta, backend="numpy").explicit(c)


def total_mass(net: PoreNetwork, c) -> float:
    return float(np.dot(net.volume, c))


# ---------------------------------------------------------------------------
# Step-time validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DtReport:
    dt: float
    substeps: int
    n_steps: int
    max_abs_deviation: float
    max_rel_deviation: float
    implicit: np.ndarray
    explicit: np.ndarray


def validate_dt(net: PoreNetwork, params: DiffusionParams, c0, n_steps: int,
                substeps: int | None = None, backend: str | None = None) -> DtReport:
    """Run the implicit scheme at dt and the explicit one at dt/m; compare."""
    bound = max_stable_dt(net, params.D_c, params.alpha)
    if substeps is None:
        substeps = 1 if math.isinf(bound) else max(1, math.ceil(params.dt / bound))
    theta = build_conductances(net, params)
    imp = Diffuser(net, theta, backend=backend)
    exp = Diffuser(net, theta / substeps, backend="numpy")
    ci = np.asarray(c0, dtype=float).copy()
    ce = ci.copy()
    for _ in range(n_steps):
        ci = imp.implicit(ci)
        for _ in range(substeps):
            ce = exp.explicit(ce)
    dev = np.abs(ci - ce)
    scale = float(np.max(np.abs(ce))) if ce.size else 0.0
    max_abs = float(dev.max()) if dev.size else 0.0
    return DtReport(params.dt, substeps, n_steps, max_abs, max_abs / scale if scale > 0 else 0.0, ci, ce)


# ---------------------------------------------------------------------------
# Plane profiles and calibration
# ---------------------------------------------------------------------------

_AXES = {"x": 0, "y": 1, "z": 2}


def _axis_index(axis) -> int:
    if isinstance(axis, str):
        try:
            return _AXES[axis.lower()]
        except KeyError:
            raise ValueError(f"axis must be x, y or z, got {axis!r}") from None
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be 0, 1 or 2, got {axis!r}")
    return int(axis)


def plane_of_voxels(n_axis: int, n_planes: int) -> np.ndarray:
    """Plane index of each voxel layer: floor(t * n_planes / n_axis)."""
    if n_planes < 1:
        raise ValueError("n_planes must be >= 1")
    return (np.arange(n_axis) * n_planes) // n_axis


def region_plane_counts(partition: Partition, axis, n_planes: int) -> sparse.csr_matrix:
    """(R, n_planes) sparse matrix of pore voxel counts per region and plane slab."""
    ax = _axis_index(axis)
    labels = partition.label_image
    idx = np.nonzero(labels)
    region = labels[idx].astype(np.int64) - 1
    plane = plane_of_voxels(labels.shape[ax], n_planes)[idx[ax]]
    mat = sparse.coo_matrix(
        (np.ones(region.size), (region, plane)), shape=(partition.n_regions, n_planes)
    ).tocsr()
    mat.sum_duplicates()
    return mat


def plane_mass_profile(c, partition: Partition, axis="z", n_planes: int | None = None,
                       counts: sparse.csr_matrix | None = None) -> np.ndarray:
    """Mass per plane slab: sum over its pore voxels of voxel volume times concentration."""
    if counts is None:
        ax = _axis_index(axis)
        n_planes = partition.label_image.shape[ax] if n_planes is None else n_planes
        counts = region_plane_counts(partition, axis, n_planes)
    rx, ry, rz = partition.resolution
    return (rx * ry * rz) * (counts.T @ np.asarray(c, dtype=float))


def plane_initial_field(partition: Partition, axis, n_planes: int, planes, mass: float,
                        counts: sparse.csr_matrix | None = None) -> np.ndarray:
    """Concentrations after putting ``mass`` into the given planes.

    Each region receives mass in proportion to its voxels inside those planes;
    the mass then spreads over the region's whole volume.
    """
    if counts is None:
        counts = region_plane_counts(partition, axis, n_planes)
    planes = np.asarray(list(planes), dtype=np.int64)
    if planes.size == 0 or planes.min() < 0 or planes.max() >= counts.shape[1]:
        raise ValueError(f"source planes {planes.tolist()} outside 0..{counts.shape[1] - 1}")
    inside = np.asarray(counts[:, planes].sum(axis=1)).ravel()
    if inside.sum() == 0:
        raise ValueError("source planes contain no pore voxel")
    region_mass = mass * inside / inside.sum()
    return region_mass / partition.volume


def pearson(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.shape != b.shape:
        raise CalibrationError(f"profiles differ in length: {a.size} vs {b.size}")
    sa, sb = a.std(), b.std()
    if sa == 0 or sb == 0:
        raise CalibrationError("correlation undefined for a constant profile")
    return float(((a - a.mean()) * (b - b.mean())).mean() / (sa * sb))


@dataclass(frozen=True)
class PlaneScenario:
    """Diffusion benchmark: mass injected into source planes, run for a duration."""

    D_c: float  # um^2/h
    dt: float  # h
    duration: float  # h
    axis: str = "z"
    n_planes: int = 50
    source_planes: tuple[int, ...] = (0, 1)
    mass: float = 1.0

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.duration / self.dt)))


def simulate_plane_profile(net: PoreNetwork, partition: Partition, scenario: PlaneScenario, alpha: float,
                           backend: str | None = None, diffuser: Diffuser | None = None,
                           counts=None) -> np.ndarray:
    if counts is None:
        counts = region_plane_counts(partition, scenario.axis, scenario.n_planes)
    c = plane_initial_field(partition, scenario.axis, scenario.n_planes, scenario.source_planes, scenario.mass, counts)
    params = DiffusionParams(scenario.D_c, scenario.dt, alpha)
    theta = build_conductances(net, params)
    if diffuser is None:
        diffuser = Diffuser(net, theta, backend=backend)
    else:
        diffuser.set_theta(theta)
    for _ in range(scenario.n_steps):
        c = diffuser.implicit(c)
    return plane_mass_profile(c, partition, counts=counts)


@dataclass(frozen=True)
class CalibrationResult:
    alpha: float
    correlation: float
    alphas: np.ndarray
    correlations: np.ndarray


def default_alpha_grid() -> np.ndarray:
    return np.round(np.arange(5, 101) / 100.0, 2)


def calibrate_alpha(net: PoreNetwork, partition: Partition, reference_profile, scenario: PlaneScenario,
                    alphas=None, backend: str | None = None) -> CalibrationResult:
    """Scan alpha and keep the value maximizing the Pearson correlation of plane profiles."""
    reference = np.asarray(reference_profile, dtype=float)
    if reference.shape != (scenario.n_planes,):
        raise CalibrationError(f"reference has {reference.size} planes, scenario expects {scenario.n_planes}")
    if reference.std() == 0:
        raise CalibrationError("correlation undefined: reference profile is constant")
    alphas = default_alpha_grid() if alphas is None else np.asarray(alphas, dtype=float)
    counts = region_plane_counts(partition, scenario.axis, scenario.n_planes)
    diffuser = Diffuser(net, np.zeros(net.n_arcs), backend=backend)
    corr = np.full(alphas.size, np.nan)
    for t, a in enumerate(alphas):
        prof = simulate_plane_profile(net, partition, scenario, float(a), diffuser=diffuser, counts=counts)
        if prof.std() > 0:
            corr[t] = pearson(prof, reference)
    if np.all(np.isnan(corr)):
        raise CalibrationError("correlation undefined for every alpha (constant simulated profiles)")
    best = int(np.nanargmax(corr))
    log.info("calibration: alpha=%.2f correlation=%.6f", alphas[best], corr[best])
    return CalibrationResult(float(alphas[best]), float(corr[best]), alphas, corr)


def save_profile_csv(profile, path) -> None:
    with open(path, "w") as fh:
        fh.write("plane,mass\n")
        for p, m in enumerate(profile):
            fh.write(f"{p},{float(m)!r}\n")


def load_profile_csv(path) -> np.ndarray:
    from .errors import FormatError, InputOutputError

    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except FileNotFoundError:
        raise InputOutputError(f"reference profile not found: {path}") from None
    except ValueError as exc:
        raise FormatError(f"{path}: bad profile CSV: {exc}") from None
    if data.shape[1] != 2:
        raise FormatError(f"{path}: expected columns plane,mass")
    order = np.argsort(data[:, 0])
    if not np.array_equal(data[order, 0], np.arange(len(data))):
        raise FormatError(f"{path}: planes must be 0..n-1")
    return data[order, 1]
