"""End-to-end pair generation and the on-disk scene/dataset schemas.

Every scene index i of a run with master seed S draws from its own stream
seeded by (S, i), so scenes are reproducible in isolation, in parallel,
and in any order. One stream drives placement first, then rendering.

A scene manifest is JSON carrying the full config snapshot, every accepted
placement (pose, anchor, score terms, and a run-length-encoded copy of the
clipped instance mask), and every skip. The embedded masks let a validator
recompute all constraint quantities exactly from the scene directory alone,
which composited label volumes cannot support (overlaps are overwritten).
"""

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .anchors import AnchorModel
from .bank import AugmentParams, ShapeBank
from .errors import DataFormatError
from .placement import (Placement, SceneState, ScoreBreakdown, SynthesisConfig,
                        synthesize_scene)
from .relations import RelationGraph, Weights
from .render import RenderParams, render_image, render_labels
from .volume import VoxelGrid

SCENE_SCHEMA = "anatomy-forge/scene-v1"
DATASET_SCHEMA = "anatomy-forge/dataset-v1"

IMAGE_PATTERN = "img_{:06d}.nii"
LABEL_PATTERN = "lab_{:06d}.nii"
SCENE_PATTERN = "scene_{:06d}.json"


def rle_encode(mask: np.ndarray) -> list[int]:
    """Run lengths of the mask flattened x-fastest, starting with a zero run."""
    flat = np.asarray(mask, dtype=bool).ravel(order="F")
    if flat.size == 0:
        return []
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return [int(r) for r in runs]


def rle_decode(runs: list[int], dims) -> np.ndarray:
    """Inverse of rle_encode."""
    dims = tuple(int(d) for d in dims)
    total = int(np.prod(dims))
    flat = np.zeros(total, dtype=bool)
    pos = 0
    value = False
    for run in runs:
        if run < 0 or pos + run > total:
            raise DataFormatError("run-length data does not fit the mask dims")
        if value:
            flat[pos:pos + run] = True
        pos += run
        value = not value
    if pos != total:
        raise DataFormatError(f"run-length data covers {pos} of {total} voxels")
    return flat.reshape(dims, order="F")


def config_snapshot(config: SynthesisConfig, render: RenderParams) -> dict:
    snap = asdict(config)
    snap["dims"] = list(config.dims)
    snap["augment"]["scale_range"] = list(config.augment.scale_range)
    if config.instances_per_class is not None:
        snap["instances_per_class"] = {str(k): int(v)
                                       for k, v in config.instances_per_class.items()}
    snap["render"] = asdict(render)
    snap["render"]["intensity_range"] = list(render.intensity_range)
    return snap


def config_from_snapshot(snap: dict) -> tuple[SynthesisConfig, RenderParams]:
    snap = dict(snap)
    render_part = dict(snap.pop("render"))
    render_part["intensity_range"] = tuple(render_part["intensity_range"])
    render = RenderParams(**render_part)
    aug = dict(snap.pop("augment"))
    aug["scale_range"] = tuple(aug["scale_range"])
    weights = snap.pop("weights")
    ipc = snap.pop("instances_per_class")
    config = SynthesisConfig(
        augment=AugmentParams(**aug),
        weights=Weights(**weights) if weights is not None else None,
        instances_per_class={int(k): int(v) for k, v in ipc.items()} if ipc else None,
        dims=tuple(snap.pop("dims")),
        **snap,
    )
    return config, render


def scene_to_manifest(scene: SceneState, seed: int, index: int,
                      config: SynthesisConfig, render: RenderParams) -> dict:
    placements = []
    for p in scene.placements:
        placements.append({
            "step": p.step,
            "class_id": p.class_id,
            "offset": list(p.offset),
            "centroid": [float(v) for v in p.centroid],
            "anchor": [float(v) for v in p.anchor],
            "score": {
                "spatial": p.score.spatial,
                "phys": p.score.phys,
                "topo": p.score.topo,
                "total": p.score.total,
            },
            "start": list(p.start),
            "mask_dims": list(p.mask.shape),
            "voxels": p.voxels,
            "rle": rle_encode(p.mask),
        })
    return {
        "schema": SCENE_SCHEMA,
        "seed": int(seed),
        "index": int(index),
        "dims": list(scene.dims),
        "config": config_snapshot(config, render),
        "placements": placements,
        "skips": [dict(s) for s in scene.skips],
    }


def manifest_to_scene(manifest: dict) -> SceneState:
    """Rebuild the occupancy state by replaying the recorded placements."""
    if manifest.get("schema") != SCENE_SCHEMA:
        raise DataFormatError(f"unknown scene schema {manifest.get('schema')!r}")
    scene = SceneState(manifest["dims"])
    for rec in manifest["placements"]:
        mask = rle_decode(rec["rle"], rec["mask_dims"])
        voxels = int(mask.sum())
        if voxels != int(rec["voxels"]):
            raise DataFormatError(
                f"placement step {rec['step']}: mask voxel count {voxels} "
                f"does not match recorded {rec['voxels']}")
        score = rec["score"]
        scene.add_raw(Placement(
            step=int(rec["step"]),
            class_id=int(rec["class_id"]),
            offset=tuple(int(v) for v in rec["offset"]),
            centroid=np.array(rec["centroid"], dtype=float),
            anchor=np.array(rec["anchor"], dtype=float),
            score=ScoreBreakdown(score["spatial"], score["phys"], score["topo"]),
            start=tuple(int(v) for v in rec["start"]),
            mask=mask,
            voxels=voxels,
        ))
    scene.skips = [dict(s) for s in manifest.get("skips", [])]
    return scene


def scene_rng(seed: int, index: int) -> np.random.Generator:
    """The per-scene stream: independent of every other index."""
    return np.random.default_rng([int(seed), int(index)])


def generate_pair(bank: ShapeBank, anchors: AnchorModel, graph: RelationGraph,
                  config: SynthesisConfig, render: RenderParams, seed: int,
                  index: int) -> tuple[VoxelGrid, VoxelGrid, dict]:
    """Synthesize scene ``index`` and render its (image, labels, manifest)."""
    if index < 0:
        raise ValueError(f"scene index must be non-negative, got {index}")
    rng = scene_rng(seed, index)
    scene = synthesize_scene(bank, anchors, graph, config, rng)
    labels = render_labels(scene)
    image = render_image(scene, render, rng)
    manifest = scene_to_manifest(scene, seed, index, config, render)
    return image, labels, manifest


def manifest_json(manifest: dict) -> str:
    """Canonical serialization: sorted keys, no whitespace churn."""
    return json.dumps(manifest, sort_keys=True, separators=(",", ":")) + "\n"


def pair_filenames(index: int) -> tuple[str, str, str]:
    return (IMAGE_PATTERN.format(index), LABEL_PATTERN.format(index),
            SCENE_PATTERN.format(index))


def write_pair(out_dir, index: int, image: VoxelGrid, labels: VoxelGrid,
               manifest: dict) -> None:
    from .nifti import write_nifti
    out_dir = Path(out_dir)
    img_name, lab_name, scene_name = pair_filenames(index)
    write_nifti(image, out_dir / img_name)
    write_nifti(labels, out_dir / lab_name)
    (out_dir / scene_name).write_text(manifest_json(manifest))


def write_dataset_index(out_dir, seed: int, indices: list[int], dims) -> None:
    out_dir = Path(out_dir)
    pairs = []
    for i in sorted(indices):
        img_name, lab_name, scene_name = pair_filenames(i)
        pairs.append({"index": i, "image": img_name, "label": lab_name,
                      "scene": scene_name})
    doc = {
        "schema": DATASET_SCHEMA,
        "seed": int(seed),
        "count": len(pairs),
        "dims": [int(d) for d in dims],
        "pairs": pairs,
    }
    (out_dir / "dataset.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def read_dataset_index(dataset_dir) -> dict:
    path = Path(dataset_dir) / "dataset.json"
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot read dataset index: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON: {exc}") from exc
    if doc.get("schema") != DATASET_SCHEMA:
        raise DataFormatError(f"{path}: unknown dataset schema {doc.get('schema')!r}")
    return doc


def load_manifest(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot read manifest: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON: {exc}") from exc
    return doc
