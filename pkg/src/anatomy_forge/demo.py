"""Procedural demo corpus: a handful of synthetic torso-like label volumes
for exercising the full pipeline without any real imaging data.

Each subject rasterizes the same 32 organ analogues (ellipsoids, boxes,
axis-aligned tubes) with per-subject jitter of positions and sizes, so the
fitted anchors get honest cross-subject variance. Raw label values are
deliberately non-contiguous to exercise class remapping.

Run ``python -m anatomy_forge.demo --out demo_sources`` to write the
volumes plus a matching classes file and relation-graph config.
"""

import argparse
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .volume import LABEL_DTYPE, VoxelGrid

DEMO_SUBJECTS = 5
DEMO_DIMS = (64, 64, 64)
DEMO_SEED = 7

CENTER_JITTER = 0.025
SIZE_JITTER = (0.85, 1.15)


@dataclass(frozen=True)
class OrganSpec:
    raw_id: int
    name: str
    kind: str                      # ellipsoid | box | tube_x | tube_z
    center: tuple[float, float, float]
    size: tuple[float, float, float]


# Axis convention: x left->right, y back->front, z feet->head, all in [0, 1].
ORGANS = [
    OrganSpec(3, "lung_left", "ellipsoid", (0.32, 0.50, 0.72), (0.13, 0.14, 0.17)),
    OrganSpec(5, "lung_right", "ellipsoid", (0.68, 0.50, 0.72), (0.13, 0.14, 0.17)),
    OrganSpec(8, "trachea", "tube_z", (0.34, 0.50, 0.74), (0.030, 0.030, 0.090)),
    OrganSpec(9, "heart", "ellipsoid", (0.45, 0.55, 0.62), (0.09, 0.09, 0.08)),
    OrganSpec(12, "liver", "ellipsoid", (0.63, 0.55, 0.47), (0.14, 0.12, 0.10)),
    OrganSpec(14, "stomach", "ellipsoid", (0.40, 0.60, 0.45), (0.09, 0.08, 0.07)),
    OrganSpec(17, "spleen", "ellipsoid", (0.26, 0.55, 0.47), (0.06, 0.06, 0.05)),
    OrganSpec(21, "pancreas", "box", (0.45, 0.52, 0.42), (0.10, 0.03, 0.03)),
    OrganSpec(22, "kidney_left", "ellipsoid", (0.32, 0.38, 0.38), (0.05, 0.04, 0.07)),
    OrganSpec(25, "kidney_right", "ellipsoid", (0.68, 0.38, 0.38), (0.05, 0.04, 0.07)),
    OrganSpec(28, "aorta", "tube_z", (0.52, 0.42, 0.50), (0.025, 0.025, 0.28)),
    OrganSpec(30, "vena_cava", "tube_z", (0.58, 0.45, 0.50), (0.020, 0.020, 0.26)),
    OrganSpec(33, "esophagus", "tube_z", (0.48, 0.45, 0.72), (0.016, 0.016, 0.12)),
    OrganSpec(36, "bladder", "ellipsoid", (0.50, 0.55, 0.15), (0.06, 0.06, 0.05)),
    OrganSpec(38, "duodenum", "ellipsoid", (0.55, 0.58, 0.38), (0.05, 0.04, 0.03)),
    OrganSpec(41, "gallbladder", "ellipsoid", (0.60, 0.60, 0.44), (0.032, 0.032, 0.042)),
    OrganSpec(44, "adrenal_left", "ellipsoid", (0.33, 0.40, 0.47), (0.028, 0.024, 0.032)),
    OrganSpec(45, "adrenal_right", "ellipsoid", (0.67, 0.40, 0.47), (0.028, 0.024, 0.032)),
    OrganSpec(49, "spine", "box", (0.50, 0.30, 0.50), (0.045, 0.045, 0.33)),
    OrganSpec(52, "rib_left", "box", (0.22, 0.50, 0.68), (0.022, 0.12, 0.10)),
    OrganSpec(55, "rib_right", "box", (0.78, 0.50, 0.68), (0.022, 0.12, 0.10)),
    OrganSpec(57, "pelvis", "box", (0.50, 0.42, 0.12), (0.16, 0.07, 0.05)),
    OrganSpec(60, "femur_left", "tube_z", (0.36, 0.48, 0.06), (0.035, 0.035, 0.05)),
    OrganSpec(63, "femur_right", "tube_z", (0.64, 0.48, 0.06), (0.035, 0.035, 0.05)),
    OrganSpec(66, "colon", "tube_x", (0.50, 0.64, 0.30), (0.15, 0.040, 0.038)),
    OrganSpec(68, "small_bowel", "ellipsoid", (0.46, 0.55, 0.28), (0.12, 0.08, 0.06)),
    OrganSpec(71, "sacrum", "box", (0.50, 0.33, 0.18), (0.05, 0.04, 0.06)),
    OrganSpec(74, "sternum", "box", (0.50, 0.72, 0.65), (0.022, 0.022, 0.12)),
    OrganSpec(77, "scapula_left", "box", (0.18, 0.30, 0.75), (0.04, 0.02, 0.08)),
    OrganSpec(80, "scapula_right", "box", (0.82, 0.30, 0.75), (0.04, 0.02, 0.08)),
    OrganSpec(83, "thyroid", "ellipsoid", (0.50, 0.52, 0.90), (0.042, 0.032, 0.028)),
    OrganSpec(87, "portal_vein", "ellipsoid", (0.55, 0.52, 0.52), (0.045, 0.022, 0.022)),
]

RAW_IDS = [o.raw_id for o in ORGANS]
NAMES = [o.name for o in ORGANS]

# Relation set shipped with the demo graph. Directions put the class that
# is placed later (smaller mean volume) first, so its reward is live.
RELATIONS = [
    ("containment", "trachea", "lung_left", 0.30),
    ("containment", "gallbladder", "liver", 0.30),
    ("adjacency", "aorta", "liver", 20),
    ("adjacency", "pancreas", "stomach", 20),
    ("exclusion", "spine", "liver", 0.35),
    ("exclusion", "spine", "stomach", 0.35),
    ("exclusion", "spine", "heart", 0.35),
    ("exclusion", "pelvis", "liver", 0.35),
]


def _rasterize(data: np.ndarray, organ: OrganSpec, center: np.ndarray,
               size: np.ndarray) -> None:
    dims = np.asarray(data.shape)
    factors = np.maximum(dims - 1, 1).astype(float)
    c = center * factors
    r = np.maximum(size * factors, 0.6)
    ax = [np.arange(dims[i], dtype=float) - c[i] for i in range(3)]
    x = ax[0][:, None, None]
    y = ax[1][None, :, None]
    z = ax[2][None, None, :]
    if organ.kind == "ellipsoid":
        hit = (x / r[0]) ** 2 + (y / r[1]) ** 2 + (z / r[2]) ** 2 <= 1.0
    elif organ.kind == "box":
        hit = (np.abs(x) <= r[0]) & (np.abs(y) <= r[1]) & (np.abs(z) <= r[2])
    elif organ.kind == "tube_z":
        hit = ((x / r[0]) ** 2 + (y / r[1]) ** 2 <= 1.0) & (np.abs(z) <= r[2])
    elif organ.kind == "tube_x":
        hit = ((y / r[1]) ** 2 + (z / r[2]) ** 2 <= 1.0) & (np.abs(x) <= r[0])
    else:
        raise ValueError(f"unknown organ kind {organ.kind!r}")
    data[hit] = organ.raw_id


def make_subject(subject: int, dims=DEMO_DIMS, seed: int = DEMO_SEED) -> VoxelGrid:
    """One jittered subject; later organs in the table overwrite earlier ones."""
    rng = np.random.default_rng([seed, subject])
    data = np.zeros(tuple(dims), dtype=LABEL_DTYPE)
    for organ in ORGANS:
        center = np.asarray(organ.center) + rng.uniform(-CENTER_JITTER, CENTER_JITTER, 3)
        size = np.asarray(organ.size) * rng.uniform(*SIZE_JITTER)
        _rasterize(data, organ, center, size)
    return VoxelGrid(data, "labels")


def make_demo_corpus(n_subjects: int = DEMO_SUBJECTS, dims=DEMO_DIMS,
                     seed: int = DEMO_SEED) -> list[VoxelGrid]:
    return [make_subject(i, dims, seed) for i in range(n_subjects)]


def graph_text() -> str:
    """The demo relation-graph config (also shipped at configs/)."""
    lines = [
        "# anatomy-forge demo relation graph",
        "# class ids follow ascending raw-label order of the demo corpus",
    ]
    for i, name in enumerate(names_by_class_id(), start=1):
        lines.append(f"class {i} {name}")
    lines.append("")
    lines.append("# containment: first class rewarded for sitting inside the second")
    lines.append("# adjacency:   first class rewarded for touching the second")
    lines.append("# exclusion:   hard ceiling on mutual IoU, checked both ways")
    for kind, a, b, threshold in RELATIONS:
        lines.append(f"{kind} {a} {b} {threshold}")
    lines.append("")
    lines.append("# add further edges here, e.g.:")
    lines.append("# adjacency spleen stomach 20")
    lines.append("# exclusion sternum heart 0.35")
    lines.append("")
    lines.append("weights 1 1 1 0.8")
    return "\n".join(lines) + "\n"


def names_by_class_id() -> list[str]:
    """Organ names in ascending raw-id order (the bank's class-id order)."""
    return [name for _, name in sorted(zip(RAW_IDS, NAMES))]


def classes_text() -> str:
    lines = ["# raw_label name"]
    lines += [f"{o.raw_id} {o.name}" for o in sorted(ORGANS, key=lambda o: o.raw_id)]
    return "\n".join(lines) + "\n"


def main(argv=None) -> int:
    from .nifti import write_nifti

    parser = argparse.ArgumentParser(
        description="Write the synthetic demo corpus (label volumes + configs).",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--subjects", type=int, default=DEMO_SUBJECTS)
    parser.add_argument("--dims", default="64,64,64", help="volume dims as X,Y,Z")
    parser.add_argument("--seed", type=int, default=DEMO_SEED)
    args = parser.parse_args(argv)

    dims = tuple(int(v) for v in args.dims.split(","))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.subjects):
        write_nifti(make_subject(i, dims, args.seed), out / f"sub_{i:02d}.nii")
    (out / "classes.txt").write_text(classes_text())
    (out / "relations.txt").write_text(graph_text())
    print(f"wrote {args.subjects} subjects of dims {dims} to {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
