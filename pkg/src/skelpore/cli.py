"""Command-line interface.

Stages write their outputs into ``--out`` and record them in
``<out>/manifest.json``; a stage whose inputs, parameters and outputs are
unchanged is skipped unless ``--force`` is given.

    skelpore fixture     --shape cylinder --out run/
    skelpore skeletonize --volume run/volume.raw --out run/
    skelpore segment     --volume run/volume.raw --out run/
    skelpore graphify    --labels run/labels.raw --out run/
    skelpore calibrate   --network run/network.json --labels run/labels.raw --reference ref.csv --scenario s.ini --out run/
    skelpore simulate    --network run/network.json --labels run/labels.raw --scenario s.ini --out run/
    skelpore pipeline    --volume run/volume.raw --out run/ [--scenario s.ini]

Exit codes: 0 success, 1 other package error, 2 usage, 3 I/O, 4 format,
5 solver or calibration, 6 stability, 7 topology.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, _accel
from . import biology, partition, poregraph, scenario as scen, simulate, skeleton, skelgraph, voxelgrid
from .errors import InputOutputError, ScenarioError, SkelporeError
from .manifest import PipelineManifest

log = logging.getLogger("skelpore")

SKELETON_RAW = "skeleton.raw"
SKELETON_POINTS = "skeleton_points.csv"
LABELS_RAW = "labels.raw"
REGIONS_CSV = "regions.csv"
BRANCHES_CSV = "branches.csv"
NETWORK_JSON = "network.json"
NODES_CSV = "nodes.csv"
ARCS_CSV = "arcs.csv"
STATS_JSON = "network_stats.json"
CALIBRATION_CSV = "calibration.csv"
TIMESERIES_CSV = "timeseries.csv"
SOLVER_LOG_CSV = "solver_log.csv"


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _meta_of(path, meta=None) -> Path:
    return Path(meta) if meta else voxelgrid.meta_path_for(path)


def _with_meta(*paths):
    """Data files plus their sidecars, for hashing."""
    out = []
    for p in paths:
        out.append(Path(p))
        side = voxelgrid.meta_path_for(p)
        if side.exists():
            out.append(side)
    return out


def _require(path, what):
    if not Path(path).exists():
        raise InputOutputError(f"{what} not found: {path}")


def _skip(manifest, stage, inputs, params, force) -> bool:
    if not force and manifest.up_to_date(stage, inputs, params):
        print(f"{stage}: up to date, skipped")
        return True
    return False


def _inputs(paths, meta=None):
    files = _with_meta(*paths)
    if meta:
        files.append(Path(meta))
    return files


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_fixture(args) -> int:
    out = _out(args)
    dims = tuple(args.dims)
    res = tuple(args.resolution)
    if args.shape == "porous":
        grid = voxelgrid.make_porous(dims, args.porosity, args.smoothing, args.seed, res)
    else:
        params = json.loads(args.params) if args.params else _FIXTURE_DEFAULTS[args.shape]
        grid = voxelgrid.make_shape(args.shape, dims, res, **params)
    path = out / "volume.raw"
    voxelgrid.save_raw(grid, path)
    print(f"wrote {path}: dims {grid.dims}, {grid.n_pore} pore voxels, porosity {grid.porosity:.4f}")
    return 0


_FIXTURE_DEFAULTS = {
    "cylinder": {"radius": 3, "length": 40},
    "torus": {"major": 14, "minor": 4},
    "L-tube": {"radius": 3, "arm": 20},
    "cube-with-hole": {"side": 30, "hole": 8},
    "y-tube": {"radius": 3, "arm": 20},
    "box": {"size": [10, 10, 10]},
}


def cmd_skeletonize(args) -> int:
    out = _out(args)
    _require(args.volume, "volume")
    manifest = PipelineManifest.open(out)
    inputs = _inputs([args.volume], args.meta)
    outputs = [out / SKELETON_RAW, voxelgrid.meta_path_for(out / SKELETON_RAW), out / SKELETON_POINTS]
    params = {"backend": _accel.resolve_backend()}
    if _skip(manifest, "skeletonize", inputs, params, args.force):
        return 0
    grid = voxelgrid.load_raw(args.volume, args.meta)
    skel = skeleton.thin(grid)
    graph = skelgraph.build_graph(skel)
    voxelgrid.save_label_raw(skel.mask.astype(np.uint32), outputs[0], grid.resolution)
    skeleton.save_points_csv(skel, outputs[2])
    manifest.record("skeletonize", inputs, params, outputs)
    print(f"skeleton points: {skel.n_points}")
    print(f"ending nodes: {graph.count(skelgraph.ENDING)}  simple nodes: {graph.count(skelgraph.SIMPLE)}  "
          f"interior nodes: {graph.count(skelgraph.INTERIOR)}")
    return 0


def _load_skeleton(path, grid):
    arr, res = voxelgrid.load_label_raw(path)
    if arr.shape != grid.dims:
        raise SkelporeError(f"skeleton dims {arr.shape} differ from volume dims {grid.dims}")
    return skeleton.SkeletonMask(arr != 0, grid.resolution)


def cmd_segment(args) -> int:
    out = _out(args)
    skel_path = Path(args.skeleton) if args.skeleton else out / SKELETON_RAW
    _require(args.volume, "volume")
    _require(skel_path, "skeleton image")
    manifest = PipelineManifest.open(out)
    inputs = _inputs([args.volume, skel_path], args.meta)
    outputs = [out / LABELS_RAW, voxelgrid.meta_path_for(out / LABELS_RAW), out / REGIONS_CSV, out / BRANCHES_CSV]
    params = {}
    if _skip(manifest, "segment", inputs, params, args.force):
        return 0
    grid = voxelgrid.load_raw(args.volume, args.meta)
    skel = _load_skeleton(skel_path, grid)
    branches = skelgraph.extract_branches(skelgraph.build_graph(skel))
    part = partition.partition_grid(grid, branches)
    voxelgrid.save_label_raw(part.label_image, outputs[0], grid.resolution)
    partition.save_region_table(part, outputs[2])
    skelgraph.save_branch_table(branches, outputs[3])
    manifest.record("segment", inputs, params, outputs)
    print(f"branches: {len(branches)}")
    print(f"regions: {part.n_regions}")
    return 0


def cmd_graphify(args) -> int:
    out = _out(args)
    labels_path = Path(args.labels) if args.labels else out / LABELS_RAW
    _require(labels_path, "label image")
    manifest = PipelineManifest.open(out)
    inputs = _inputs([labels_path] + ([args.volume] if args.volume else []), args.meta)
    outputs = [out / NETWORK_JSON, out / NODES_CSV, out / ARCS_CSV, out / STATS_JSON]
    params = {}
    if _skip(manifest, "graphify", inputs, params, args.force):
        stats = json.loads((out / STATS_JSON).read_text())
        _print_stats(stats)
        return 0
    labels, res = voxelgrid.load_label_raw(labels_path)
    if args.volume:
        grid = voxelgrid.load_raw(args.volume, args.meta)
        if grid.dims != labels.shape or not np.array_equal(grid.occupancy, labels != 0):
            raise SkelporeError("label image does not cover exactly the pore voxels of the volume")
    part = partition.Partition.from_label_image(labels, res)
    net = poregraph.build_network(part, source=labels_path.name)
    poregraph.save_network(net, outputs[0])
    poregraph.save_network_csv(net, outputs[1], outputs[2])
    stats = poregraph.network_stats(net)
    stats["surfels"] = int(net.surfels.sum()) if net.surfels is not None else 0
    outputs[3].write_text(json.dumps(stats, indent=1, sort_keys=True) + "\n")
    manifest.record("graphify", inputs, params, outputs)
    _print_stats(stats)
    return 0


def _print_stats(stats):
    print(f"nodes: {stats['nodes']}  arcs: {stats['arcs']}  mean degree: {stats['mean_degree']:.4f}  "
          f"volume-weighted degree: {stats['volume_weighted_degree']:.4f}  "
          f"total volume: {stats['total_volume_um3']:.6g} um^3")


def _load_scenario(args) -> scen.Scenario:
    if not args.scenario:
        raise ScenarioError("a scenario file is required (--scenario)")
    sc = scen.load_scenario(args.scenario)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "planes_axis", None):
        changes["axis"] = args.planes_axis
    if getattr(args, "n_planes", None):
        changes["n_planes"] = args.n_planes
    return replace(sc, **changes) if changes else sc


def _load_network_partition(args, out):
    net_path = Path(args.network) if args.network else out / NETWORK_JSON
    labels_path = Path(args.labels) if args.labels else out / LABELS_RAW
    net = poregraph.load_network(net_path)
    labels, res = voxelgrid.load_label_raw(labels_path)
    part = partition.Partition.from_label_image(labels, res)
    if part.n_regions != net.n_nodes:
        raise SkelporeError(f"label image has {part.n_regions} regions, network has {net.n_nodes} nodes")
    return net, part, [net_path, labels_path]


def _calibrate(net, part, sc, reference_path):
    reference = simulate.load_profile_csv(reference_path)
    return simulate.calibrate_alpha(net, part, reference, sc.plane_scenario())


def cmd_calibrate(args) -> int:
    out = _out(args)
    if not args.reference:
        raise InputOutputError("a reference profile is required (--reference)")
    _require(args.reference, "reference profile")
    sc = _load_scenario(args)
    net, part, paths = _load_network_partition(args, out)
    manifest = PipelineManifest.open(out)
    inputs = _inputs(paths + [args.reference, args.scenario])
    params = sc.as_dict()
    outputs = [out / CALIBRATION_CSV]
    if _skip(manifest, "calibrate", inputs, params, args.force):
        return 0
    res = _calibrate(net, part, sc, args.reference)
    with open(outputs[0], "w") as fh:
        fh.write("alpha,correlation\n")
        for a, c in zip(res.alphas, res.correlations):
            fh.write(f"{float(a)!r},{float(c)!r}\n")
    manifest.record("calibrate", inputs, params, outputs)
    print(f"alpha: {res.alpha:.2f}  correlation: {res.correlation:.6f}  (default alpha {simulate.DEFAULT_ALPHA})")
    return 0


def _run_diffusion_only(net, part, sc, alpha, out):
    diff = sc.diffusion(alpha)
    state = scen.initial_state(sc, net.volume, part)
    c = state.dom / net.volume
    diffuser = simulate.Diffuser(net, simulate.build_conductances(net, diff), keep_log=True)
    n_steps = max(1, int(round(sc.duration / sc.dt)))
    every = 1 if sc.output_interval is None else max(1, int(round(sc.output_interval / sc.dt)))
    counts = simulate.region_plane_counts(part, sc.axis, sc.n_planes) if sc.profile_output else None
    path = out / TIMESERIES_CSV
    with open(path, "w") as fh:
        head = ["time_h", "total_mass"]
        if counts is not None:
            head += [f"plane_{p}" for p in range(sc.n_planes)]
        fh.write(",".join(head) + "\n")

        def row(step, c):
            vals = [repr(step * sc.dt), repr(simulate.total_mass(net, c))]
            if counts is not None:
                vals += [repr(float(m)) for m in simulate.plane_mass_profile(c, part, counts=counts)]
            fh.write(",".join(vals) + "\n")

        row(0, c)
        for step in range(1, n_steps + 1):
            c = diffuser.implicit(c)
            if step % every == 0 or step == n_steps:
                row(step, c)
    m0 = float(state.dom.sum())
    m1 = simulate.total_mass(net, c)
    drift = abs(m1 - m0) / m0 if m0 > 0 else 0.0
    print(f"diffusion-only: {n_steps} steps, total mass {m0:.6g} -> {m1:.6g} (relative drift {drift:.2e})")
    return path, diffuser.stats


def cmd_simulate(args) -> int:
    out = _out(args)
    sc = _load_scenario(args)
    net, part, paths = _load_network_partition(args, out)
    inputs = paths + [Path(args.scenario)]
    alpha = sc.alpha
    if sc.calibrate:
        if not args.reference:
            raise ScenarioError("alpha = calibrate needs a reference profile (--reference)")
        _require(args.reference, "reference profile")
        inputs.append(Path(args.reference))
    manifest = PipelineManifest.open(out)
    params = sc.as_dict()
    outputs = [out / TIMESERIES_CSV, out / SOLVER_LOG_CSV]
    if _skip(manifest, "simulate", _inputs(inputs), params, args.force):
        return 0
    if sc.calibrate:
        res = _calibrate(net, part, sc, args.reference)
        alpha = res.alpha
        print(f"calibrated alpha: {alpha:.2f}  correlation: {res.correlation:.6f}")
    if sc.biology_enabled:
        state = scen.initial_state(sc, net.volume, part)
        series, _ = biology.run_decomposition(net, state, sc.biology, sc.diffusion(alpha), sc.duration,
                                               sc.output_interval)
        series.write_csv(outputs[0])
        with open(outputs[1], "w") as fh:
            fh.write("total_iterations,max_carbon_drift\n")
            fh.write(f"{series.solver_iterations},{float(series.carbon_drift.max())!r}\n")
        last = {p: float(series.percent[p][-1]) for p in biology.POOLS}
        print(f"decomposition: {series.time_h.size} outputs to t={series.time_h[-1]:.6g} h, "
              f"max carbon drift {series.carbon_drift.max():.2e}")
        print("final %: " + "  ".join(f"{p}={v:.3f}" for p, v in last.items()))
    else:
        _, stats = _run_diffusion_only(net, part, sc, alpha, out)
        with open(outputs[1], "w") as fh:
            fh.write("step,iterations,relative_residual\n")
            for s, (it, res) in enumerate(stats.log, start=1):
                fh.write(f"{s},{it},{float(res)!r}\n")
    manifest.record("simulate", _inputs(inputs), params, outputs)
    return 0


def cmd_pipeline(args) -> int:
    cmd_skeletonize(args)
    args.skeleton = None
    cmd_segment(args)
    args.labels = None
    cmd_graphify(args)
    if args.scenario:
        args.network = None
        args.labels = None
        cmd_simulate(args)
    return 0


def cmd_scenario_template(args) -> int:
    text = scen.default_scenario_text(biology=not args.diffusion_only)
    if args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skelpore", description="Skeleton-based pore networks and simulations.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--threads", type=int, default=None, help="numba worker threads")
    common.add_argument("--force", action="store_true", help="rerun even if the manifest says up to date")
    common.add_argument("-v", "--verbose", action="store_true")

    vol = argparse.ArgumentParser(add_help=False)
    vol.add_argument("--volume", required=True, help="u8 RAW volume (nonzero = pore)")
    vol.add_argument("--meta", default=None, help="metadata sidecar (default: <volume>.meta)")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--network", default=None, help=f"network file (default: <out>/{NETWORK_JSON})")
    sim.add_argument("--labels", default=None, help=f"label image (default: <out>/{LABELS_RAW})")
    sim.add_argument("--reference", default=None, help="reference plane profile CSV (plane,mass)")
    sim.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    sim.add_argument("--planes-axis", choices=("x", "y", "z"), default=None)
    sim.add_argument("--n-planes", type=int, default=None)

    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fixture", parents=[common], help="write a synthetic test volume")
    f.add_argument("--shape", choices=voxelgrid.SHAPES + ("porous",), required=True)
    f.add_argument("--dims", type=int, nargs=3, default=[64, 64, 64])
    f.add_argument("--resolution", type=float, nargs=3, default=[1.0, 1.0, 1.0])
    f.add_argument("--params", default=None, help='shape parameters as JSON, e.g. \'{"radius": 3, "length": 40}\'')
    f.add_argument("--porosity", type=float, default=0.3)
    f.add_argument("--smoothing", type=float, default=2.0)
    f.add_argument("--seed", type=int, default=0)
    f.set_defaults(func=cmd_fixture)

    s = sub.add_parser("skeletonize", parents=[common, vol], help="curvilinear skeleton of the pore space")
    s.set_defaults(func=cmd_skeletonize)

    s = sub.add_parser("segment", parents=[common, vol], help="nearest-branch regions and label image")
    s.add_argument("--skeleton", default=None, help=f"skeleton image (default: <out>/{SKELETON_RAW})")
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("graphify", parents=[common], help="region adjacency network")
    s.add_argument("--labels", default=None, help=f"label image (default: <out>/{LABELS_RAW})")
    s.add_argument("--volume", default=None, help="optional volume to cross-check the label image")
    s.add_argument("--meta", default=None)
    s.set_defaults(func=cmd_graphify)

    s = sub.add_parser("calibrate", parents=[common, sim], help="fit alpha to a reference plane profile")
    s.add_argument("--scenario", required=True)
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("simulate", parents=[common, sim], help="diffusion or full decomposition run")
    s.add_argument("--scenario", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("pipeline", parents=[common, vol, sim], help="skeletonize, segment, graphify [, simulate]")
    s.add_argument("--scenario", default=None)
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("scenario-template", help="print a scenario file with default parameters")
    s.add_argument("--out", default="-")
    s.add_argument("--diffusion-only", action="store_true")
    s.set_defaults(func=cmd_scenario_template)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _accel.set_threads(getattr(args, "threads", None))
    try:
        return args.func(args)
    except SkelporeError as exc:
        print(f"skelpore {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"skelpore {args.command}: error: {exc}", file=sys.stderr)
        return InputOutputError.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
