"""Command-line interface.

Subcommands: build-bank, fit-anchors, synthesize, validate, stats.
Exit codes: 0 success, 1 usage error, 2 data error, 3 validation failure.
"""

import argparse
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .anchors import fit_anchors, load_anchors, save_anchors
from .bank import (DEFAULT_MIN_COMPONENT, AugmentParams, build_bank, load_bank,
                   save_bank)
from .errors import DataFormatError, ForgeError
from .nifti import read_nifti, write_nifti
from .pipeline import (config_from_snapshot, config_snapshot, generate_pair,
                       load_manifest, manifest_to_scene, pair_filenames,
                       read_dataset_index, write_dataset_index, write_pair)
from .placement import SynthesisConfig, validate_scene
from .relations import EDGE_KINDS, Weights, load_graph
from .render import RenderParams, render_labels

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_VALIDATION = 3

JOBS_ENV = "ANATOMY_FORGE_JOBS"


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on usage errors; this CLI uses 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dims_arg(text: str) -> tuple[int, int, int]:
    try:
        parts = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad dims {text!r}, expected X,Y,Z")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"bad dims {text!r}, expected 3 values")
    return parts


def _range_arg(text: str) -> tuple[float, float]:
    try:
        parts = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad range {text!r}, expected LO,HI")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"bad range {text!r}, expected 2 values")
    return parts


def _source_files(args_sources) -> list[Path]:
    files: list[Path] = []
    for item in args_sources:
        p = Path(item)
        if p.is_dir():
            found = sorted(list(p.glob("*.nii")) + list(p.glob("*.nii.gz")))
            if not found:
                raise DataFormatError(f"{p}: no .nii/.nii.gz files in directory")
            files.extend(found)
        elif p.exists():
            files.append(p)
        else:
            raise DataFormatError(f"{p}: no such file or directory")
    return files


def _load_sources(args_sources):
    files = _source_files(args_sources)
    grids = [read_nifti(f) for f in files]
    ids = [f.name.removesuffix(".gz").removesuffix(".nii") for f in files]
    return grids, ids


def _parse_classes(spec: str) -> list[int]:
    """Raw class ids, either inline ("3,5,8") or one per line in a file
    (first token per line; '#' comments allowed)."""
    path = Path(spec)
    if path.exists():
        ids = []
        for lineno, raw_line in enumerate(path.read_text().splitlines(), start=1):
            line = raw_line.split("#", 1)[0].strip()
            if not line:
                continue
            token = line.split()[0]
            try:
                ids.append(int(token))
            except ValueError:
                raise DataFormatError(f"{path}: line {lineno}: bad class id {token!r}")
        if not ids:
            raise DataFormatError(f"{path}: no class ids found")
        return ids
    try:
        return [int(v) for v in spec.split(",")]
    except ValueError:
        raise DataFormatError(
            f"--classes {spec!r} is neither an existing file nor a comma-separated id list")


def _graph_class_ceiling(text: str) -> int:
    """Largest class id mentioned in a graph config (declarations or ids)."""
    hi = 0
    for raw_line in text.splitlines():
        tokens = raw_line.split("#", 1)[0].split()
        if not tokens:
            continue
        if tokens[0] == "class" and len(tokens) >= 2:
            try:
                hi = max(hi, int(tokens[1]))
            except ValueError:
                pass
        elif tokens[0] in EDGE_KINDS:
            for token in tokens[1:3]:
                try:
                    hi = max(hi, int(token))
                except ValueError:
                    pass
    return hi


def _read_graph(path, n_classes: int):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot read graph: {exc}") from exc
    return load_graph(text, n_classes)


def _resolve_jobs(value) -> int:
    if value is not None:
        jobs = value
    else:
        env = os.environ.get(JOBS_ENV, "").strip()
        if env:
            try:
                jobs = int(env)
            except ValueError:
                raise DataFormatError(f"{JOBS_ENV}={env!r} is not an integer")
        else:
            jobs = os.cpu_count() or 1
    if jobs < 1:
        raise DataFormatError(f"jobs must be >= 1, got {jobs}")
    return jobs


# ---------------------------------------------------------------- build-bank

def cmd_build_bank(args) -> int:
    grids, ids = _load_sources(args.sources)
    raw_classes = _parse_classes(args.classes)
    bank = build_bank(grids, raw_classes, source_ids=ids, min_component=args.min_component)
    save_bank(bank, args.out)
    inverse = {c: raw for raw, c in bank.class_map.items()}
    print(f"bank: {len(bank.entries)} entries, {bank.n_classes} classes, "
          f"{len(grids)} sources")
    print("class raw entries mean_voxels")
    for cid in bank.class_ids:
        entries = bank.entries_for(cid)
        print(f"{cid:5d} {inverse[cid]:3d} {len(entries):7d} {bank.mean_volume(cid):11.1f}")
    print(f"wrote {args.out}")
    return EXIT_OK


# --------------------------------------------------------------- fit-anchors

def cmd_fit_anchors(args) -> int:
    grids, _ = _load_sources(args.sources)
    raw_classes = sorted(set(_parse_classes(args.classes)))
    class_map = {raw: i + 1 for i, raw in enumerate(raw_classes)}
    model = fit_anchors(grids, class_map)
    save_anchors(model, args.out)
    print(f"anchors: {model.n_classes} classes from {len(grids)} sources")
    print("class n    mu_x   mu_y   mu_z")
    for cid in sorted(model.distributions):
        d = model.distributions[cid]
        print(f"{cid:5d} {d.n_samples:d} {d.mu[0]:7.3f} {d.mu[1]:7.3f} {d.mu[2]:7.3f}")
    print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- synthesize

_WORKER: dict = {}


def _worker_init(bank_path, anchors_path, graph_path, snapshot, out_dir):
    bank = load_bank(bank_path)
    _WORKER["bank"] = bank
    _WORKER["anchors"] = load_anchors(anchors_path)
    _WORKER["graph"] = _read_graph(graph_path, bank.n_classes)
    _WORKER["config"], _WORKER["render"] = config_from_snapshot(snapshot)
    _WORKER["out_dir"] = out_dir


def _worker_generate(task):
    seed, index = task
    image, labels, manifest = generate_pair(
        _WORKER["bank"], _WORKER["anchors"], _WORKER["graph"],
        _WORKER["config"], _WORKER["render"], seed, index)
    write_pair(_WORKER["out_dir"], index, image, labels, manifest)
    return index, len(manifest["placements"]), len(manifest["skips"])


def _build_config(args, graph) -> tuple[SynthesisConfig, RenderParams]:
    weights = None
    lam = (args.lambda_anc, args.lambda_ovl, args.lambda_in, args.lambda_adj)
    if any(v is not None for v in lam):
        base = graph.weights
        weights = Weights(
            anchor=lam[0] if lam[0] is not None else base.anchor,
            overlap=lam[1] if lam[1] is not None else base.overlap,
            containment=lam[2] if lam[2] is not None else base.containment,
            adjacency=lam[3] if lam[3] is not None else base.adjacency,
        )
    config = SynthesisConfig(
        dims=args.dims,
        n_candidates=args.n_candidates,
        perturb_sigma=args.perturb_sigma,
        retries=args.retries,
        augment=AugmentParams(
            flip_prob=args.flip_prob,
            rotation_enabled=not args.no_rotation,
            scale_range=args.scale_range,
        ),
        weights=weights,
        tau_in=args.tau_in,
        nu_contact=args.nu_contact,
        tau_hard=args.tau_hard,
        seed=args.seed,
    )
    render = RenderParams(
        shell_thickness=args.shell_thickness,
        intensity_range=args.intensity_range,
        background=args.background,
        noise_sigma=args.noise_sigma,
        per_instance_intensity=not args.uniform_intensity,
    )
    return config, render


def cmd_synthesize(args) -> int:
    if args.count < 1:
        raise DataFormatError("--count must be >= 1")
    if args.start < 0:
        raise DataFormatError("--start must be >= 0")
    jobs = _resolve_jobs(args.jobs)
    bank = load_bank(args.bank)
    anchors = load_anchors(args.anchors)
    graph = _read_graph(args.graph, bank.n_classes)
    try:
        config, render = _build_config(args, graph)
    except ValueError as exc:
        raise DataFormatError(str(exc)) from exc

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    indices = list(range(args.start, args.start + args.count))
    snapshot = config_snapshot(config, render)

    t0 = time.perf_counter()
    results = []
    if jobs == 1:
        for index in indices:
            image, labels, manifest = generate_pair(bank, anchors, graph, config,
                                                    render, args.seed, index)
            write_pair(out_dir, index, image, labels, manifest)
            results.append((index, len(manifest["placements"]), len(manifest["skips"])))
    else:
        with ProcessPoolExecutor(
                max_workers=jobs, initializer=_worker_init,
                initargs=(args.bank, args.anchors, args.graph, snapshot, out_dir)) as pool:
            tasks = [(args.seed, index) for index in indices]
            results = list(pool.map(_worker_generate, tasks))
    elapsed = time.perf_counter() - t0

    write_dataset_index(out_dir, args.seed, indices, config.dims)
    placed = sum(r[1] for r in results)
    skipped = sum(r[2] for r in results)
    rate = len(indices) / elapsed if elapsed > 0 else math.inf
    print(f"synthesized {len(indices)} volumes ({placed} placements, {skipped} skips) "
          f"into {out_dir}")
    print(f"throughput: {rate:.2f} volumes/s ({elapsed:.1f}s, jobs={jobs})")
    return EXIT_OK


# ------------------------------------------------------------------ validate

def _scene_manifests(scenes_dir) -> list[Path]:
    scenes_dir = Path(scenes_dir)
    if not scenes_dir.is_dir():
        raise DataFormatError(f"{scenes_dir}: not a directory")
    files = sorted(scenes_dir.glob("scene_*.json"))
    if not files:
        raise DataFormatError(f"{scenes_dir}: no scene_*.json manifests found")
    return files


def cmd_validate(args) -> int:
    manifest_paths = _scene_manifests(args.scenes)
    manifests = [load_manifest(p) for p in manifest_paths]
    ceiling = _graph_class_ceiling(Path(args.graph).read_text())
    max_class = max((rec["class_id"] for m in manifests for rec in m["placements"]),
                    default=0)
    graph = _read_graph(args.graph, max(ceiling, max_class, 1))

    all_violations = []
    exclusion_checks = 0
    containment = [0, 0]
    adjacency = [0, 0]
    residuals = []
    label_mismatches = []
    for path, manifest in zip(manifest_paths, manifests):
        scene = manifest_to_scene(manifest)
        snap = manifest.get("config", {})
        report = validate_scene(scene, graph,
                                tau_in=snap.get("tau_in"),
                                nu_contact=snap.get("nu_contact"),
                                tau_hard=snap.get("tau_hard"))
        exclusion_checks += report.exclusion_checks
        containment[0] += report.containment_satisfied
        containment[1] += report.containment_checks
        adjacency[0] += report.adjacency_satisfied
        adjacency[1] += report.adjacency_checks
        for v in report.violations:
            v = dict(v)
            v["scene"] = path.name
            all_violations.append(v)
        for rec in manifest["placements"]:
            c = np.asarray(rec["centroid"], dtype=float)
            a = np.asarray(rec["anchor"], dtype=float)
            residuals.append(float(np.linalg.norm(c - a)))
        lab_path = path.parent / pair_filenames(manifest["index"])[1]
        if lab_path.exists():
            stored = read_nifti(lab_path)
            if not np.array_equal(stored.data, render_labels(scene).data):
                label_mismatches.append(path.name)

    print(f"validated {len(manifests)} scenes "
          f"({sum(len(m['placements']) for m in manifests)} placements)")
    print(f"exclusion checks: {exclusion_checks}, violations: {len(all_violations)}")
    for kind, (sat, total) in (("containment", containment), ("adjacency", adjacency)):
        rate = f"{sat / total:.3f}" if total else "n/a"
        print(f"{kind} satisfaction: {sat}/{total} ({rate})")
    if residuals:
        arr = np.asarray(residuals)
        print(f"centroid-anchor residual: mean {arr.mean():.4f}, "
              f"p95 {np.percentile(arr, 95):.4f}")
    if label_mismatches:
        print(f"label volumes not reproducible from manifests: {label_mismatches}")
    for v in all_violations:
        print(f"VIOLATION {v['scene']} step {v['step']}: class {v['class_id']} vs "
              f"{v['partner']} iou {v['iou']:.4f} > {v['ceiling']:g}")

    if args.out_dir:
        from .reports import plot_satisfaction, write_violations_csv
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_violations_csv(all_violations, out / "violations.csv")
        plot_satisfaction({"containment": (containment[0], containment[1]),
                           "adjacency": (adjacency[0], adjacency[1])},
                          out / "satisfaction.png")
        print(f"report written to {out}")

    if all_violations or label_mismatches:
        return EXIT_VALIDATION
    return EXIT_OK


# --------------------------------------------------------------------- stats

def cmd_stats(args) -> int:
    from .reports import (class_stats_rows, collect_centroids, plot_centroid_scatter,
                          plot_residuals, write_stats_csv)
    manifest_paths = _scene_manifests(args.scenes)
    manifests = [load_manifest(p) for p in manifest_paths]
    anchors = load_anchors(args.anchors) if args.anchors else None

    centroids = collect_centroids(manifests)
    if anchors is not None:
        placed = set(centroids)
        modeled = set(anchors.distributions)
        if placed - modeled:
            print(f"warning: classes placed but absent from anchors: {sorted(placed - modeled)}")
        if modeled - placed:
            print(f"warning: classes in anchors but never placed: {sorted(modeled - placed)}")
    rows = class_stats_rows(centroids, anchors)

    print("class     n   mean_x  mean_y  mean_z   note")
    for row in rows:
        note = "n=1" if row["n"] == 1 else ""
        print(f"{row['class_id']:5d} {row['n']:5d}  {row['mean_x']:.4f}  "
              f"{row['mean_y']:.4f}  {row['mean_z']:.4f}   {note}")

    out = Path(args.out_dir) if args.out_dir else Path(args.scenes) / "stats"
    out.mkdir(parents=True, exist_ok=True)
    write_stats_csv(rows, out / "stats.csv")
    plot_centroid_scatter(centroids, anchors, out / "centroids_xz.png", axes=(0, 2))
    plot_centroid_scatter(centroids, anchors, out / "centroids_xy.png", axes=(0, 1))
    plot_residuals(rows, out / "residuals.png")
    print(f"stats written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------- main

def build_parser() -> _Parser:
    parser = _Parser(prog="anatomy-forge",
                     description="Synthesize anatomy-aware 3D training volumes.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("build-bank", formatter_class=fmt,
                       help="harvest organ shapes from label volumes")
    p.add_argument("--sources", nargs="+", required=True,
                   help="label volumes (.nii/.nii.gz) or directories of them")
    p.add_argument("--classes", required=True,
                   help="raw class ids: comma-separated list or a file with one id per line")
    p.add_argument("--out", required=True, help="output bank file")
    p.add_argument("--min-component", type=int, default=DEFAULT_MIN_COMPONENT,
                   help="drop connected components smaller than this many voxels")
    p.set_defaults(func=cmd_build_bank)

    p = sub.add_parser("fit-anchors", formatter_class=fmt,
                       help="fit per-class anchor Gaussians from label volumes")
    p.add_argument("--sources", nargs="+", required=True)
    p.add_argument("--classes", required=True)
    p.add_argument("--out", required=True, help="output anchors table")
    p.set_defaults(func=cmd_fit_anchors)

    p = sub.add_parser("synthesize", formatter_class=fmt,
                       help="generate image/label training pairs")
    p.add_argument("--bank", required=True)
    p.add_argument("--anchors", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int, required=True, help="number of volumes")
    p.add_argument("--start", type=int, default=0,
                   help="first scene index (for resuming or sharding)")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--dims", type=_dims_arg, default=(128, 128, 128),
                   help="scene dims as X,Y,Z")
    p.add_argument("--n-candidates", type=int, default=40,
                   help="poses proposed per instance")
    p.add_argument("--perturb-sigma", type=float, default=0.12,
                   help="anchor perturbation std (normalized coords)")
    p.add_argument("--retries", type=int, default=5,
                   help="fresh attempts after a fully rejected instance")
    p.add_argument("--flip-prob", type=float, default=0.5,
                   help="per-axis mirror probability")
    p.add_argument("--no-rotation", action="store_true",
                   help="disable the 24 axis-aligned rotations")
    p.add_argument("--scale-range", type=_range_arg, default=(0.85, 1.25),
                   help="isotropic rescale range as LO,HI")
    p.add_argument("--lambda-anc", type=float, default=None,
                   help="anchor-tether weight (default: graph weights line, 1.0)")
    p.add_argument("--lambda-ovl", type=float, default=None,
                   help="overlap penalty weight (default: graph weights line, 1.0)")
    p.add_argument("--lambda-in", type=float, default=None,
                   help="containment reward weight (default: graph weights line, 1.0)")
    p.add_argument("--lambda-adj", type=float, default=None,
                   help="adjacency reward weight (default: graph weights line, 0.8)")
    p.add_argument("--tau-in", type=float, default=None,
                   help="override every containment ratio threshold (default: per edge, 0.30)")
    p.add_argument("--nu-contact", type=float, default=None,
                   help="override every adjacency contact threshold (default: per edge, 20)")
    p.add_argument("--tau-hard", type=float, default=None,
                   help="override every exclusion IoU ceiling (default: per edge, 0.35)")
    p.add_argument("--shell-thickness", type=int, default=1,
                   help="contour shell thickness in voxels")
    p.add_argument("--intensity-range", type=_range_arg, default=(0.3, 1.0),
                   help="per-instance shell intensity range as LO,HI")
    p.add_argument("--background", type=float, default=0.0)
    p.add_argument("--noise-sigma", type=float, default=0.02,
                   help="additive Gaussian noise std")
    p.add_argument("--uniform-intensity", action="store_true",
                   help="one mid-range intensity for all instances")
    p.add_argument("--jobs", type=int, default=None,
                   help=f"worker processes (default: ${JOBS_ENV} or all cores)")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("validate", formatter_class=fmt,
                       help="recheck generated scenes against a relation graph")
    p.add_argument("--scenes", required=True, help="directory of scene_*.json manifests")
    p.add_argument("--graph", required=True)
    p.add_argument("--out-dir", default=None,
                   help="also write violations.csv and satisfaction.png here")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("stats", formatter_class=fmt,
                       help="per-class placement statistics and figures")
    p.add_argument("--scenes", required=True)
    p.add_argument("--anchors", default=None,
                   help="anchors table to compare against")
    p.add_argument("--out-dir", default=None,
                   help="report directory (default: <scenes>/stats)")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
