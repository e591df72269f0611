"""Dense 3D voxel-grid primitives: grids, masks, morphology, overlay.

Grids are numpy arrays of shape (nx, ny, nz). The canonical flat ordering
is x fastest, then y, then z (Fortran order), which matches the on-disk
payload layout of the volume files this package reads and writes. Binary
masks are plain bool arrays in the same layout.

Connectivity conventions, used consistently everywhere:
  * instance separation (connected components) uses 26-connectivity,
    so diagonal touches merge;
  * boundary extraction and contact tests use 6-connectivity (faces only).
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

LABEL_DTYPE = np.uint8
INTENSITY_DTYPE = np.float32

# Face neighbours only: boundary / contact tests.
FACE_STRUCTURE = ndimage.generate_binary_structure(3, 1)
# Full 3x3x3 neighbourhood: component separation.
FULL_STRUCTURE = np.ones((3, 3, 3), dtype=bool)


@dataclass
class VoxelGrid:
    """Dense volume of class labels or normalized intensities.

    data: (nx, ny, nz) array. Label grids hold small non-negative integers
    with 0 as background; intensity grids hold float32 values, normalized
    to [0, 1] for everything this package generates.
    meta: optional header fields carried over from a source file so that
    re-writing the grid preserves its geometry fields.
    """

    data: np.ndarray
    value_kind: str
    meta: dict | None = None

    def __post_init__(self):
        if self.data.ndim != 3 or 0 in self.data.shape:
            raise ValueError(f"grid must be 3D and non-empty, got shape {self.data.shape}")
        if self.value_kind == "labels":
            if not np.issubdtype(self.data.dtype, np.integer):
                raise ValueError(f"label grid requires an integer dtype, got {self.data.dtype}")
        elif self.value_kind == "intensity":
            if self.data.dtype != INTENSITY_DTYPE:
                raise ValueError(f"intensity grid requires float32 data, got {self.data.dtype}")
        else:
            raise ValueError(f"unknown value_kind {self.value_kind!r}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


def empty_labels(dims) -> VoxelGrid:
    """All-background label grid of the given dims."""
    return VoxelGrid(np.zeros(tuple(int(d) for d in dims), dtype=LABEL_DTYPE), "labels")


def norm_factors(dims) -> np.ndarray:
    """Per-axis divisors mapping voxel coordinates onto [0, 1]: dims - 1, floored at 1."""
    return np.maximum(np.asarray(dims, dtype=float) - 1.0, 1.0)


def mask_centroid(mask: np.ndarray) -> np.ndarray:
    """Mean (x, y, z) voxel coordinate of the set voxels. Mask must be non-empty."""
    idx = np.nonzero(mask)
    if idx[0].size == 0:
        raise ValueError("centroid of an empty mask is undefined")
    return np.array([axis.mean() for axis in idx])


def tight_bbox(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inclusive (lo, hi) corner coordinates of the set voxels."""
    idx = np.nonzero(mask)
    if idx[0].size == 0:
        raise ValueError("bounding box of an empty mask is undefined")
    lo = np.array([axis.min() for axis in idx])
    hi = np.array([axis.max() for axis in idx])
    return lo, hi


def crop_margin(mask: np.ndarray, margin: int = 1) -> np.ndarray:
    """Crop to the tight bounding box expanded by ``margin`` where the grid allows it."""
    lo, hi = tight_bbox(mask)
    lo = np.maximum(lo - margin, 0)
    hi = np.minimum(hi + margin, np.asarray(mask.shape) - 1)
    return mask[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1].copy()


def pad_tight(mask: np.ndarray, margin: int = 1) -> np.ndarray:
    """Crop to tight bounds, then pad a full background margin on every face."""
    lo, hi = tight_bbox(mask)
    sub = mask[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1]
    return np.pad(sub, margin)


def connected_components(grid: VoxelGrid, class_id: int) -> list[np.ndarray]:
    """Split the voxels equal to class_id into 26-connected components.

    Returns full-dims bool masks sorted by descending voxel count; ties are
    broken by the lexicographically smallest (x, y, z) voxel in the component.
    The masks are disjoint and their union is exactly the class voxel set.
    """
    binary = grid.data == class_id
    if not binary.any():
        return []
    labels, _ = ndimage.label(binary, structure=FULL_STRUCTURE)
    counts = np.bincount(labels.ravel())
    # argwhere scans axis 0 first, so rows come out sorted lexicographically
    # by (x, y, z); the first row per label is that component's minimum voxel.
    coords = np.argwhere(binary)
    scan_labels = labels[binary]
    uniq, first_idx = np.unique(scan_labels, return_index=True)
    keys = [
        (-int(counts[lab]), tuple(int(v) for v in coords[fi]), int(lab))
        for lab, fi in zip(uniq, first_idx)
    ]
    keys.sort()
    return [labels == lab for (_, _, lab) in keys]


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection-over-union of two same-dims binary masks (0.0 when both empty)."""
    if a.shape != b.shape:
        raise ValueError(f"mask dims differ: {a.shape} vs {b.shape}")
    inter = int(np.logical_and(a, b).sum())
    union = int(a.sum()) + int(b.sum()) - inter
    return inter / union if union else 0.0


def boundary_voxels(mask: np.ndarray) -> np.ndarray:
    """Set voxels with at least one 6-neighbour outside the mask or off the grid."""
    interior = ndimage.binary_erosion(mask, structure=FACE_STRUCTURE, border_value=0)
    return mask & ~interior


def shell_mask(mask: np.ndarray, thickness: int) -> np.ndarray:
    """The ``thickness`` outermost voxel layers: mask minus its 6-connectivity
    erosion applied ``thickness`` times."""
    if thickness < 1:
        raise ValueError("shell thickness must be >= 1")
    interior = ndimage.binary_erosion(
        mask, structure=FACE_STRUCTURE, iterations=thickness, border_value=0
    )
    return mask & ~interior


def clip_window(offset, mask_dims, dims):
    """Overlap window between a mask grid translated by ``offset`` and a scene.

    Returns (scene_slices, local_slices) or None when the two grids do not
    overlap at all.
    """
    offset = np.asarray(offset, dtype=int)
    mask_dims = np.asarray(mask_dims, dtype=int)
    dims = np.asarray(dims, dtype=int)
    lo = np.maximum(offset, 0)
    hi = np.minimum(offset + mask_dims, dims)
    if np.any(lo >= hi):
        return None
    scene_sl = tuple(slice(int(l), int(h)) for l, h in zip(lo, hi))
    local_sl = tuple(slice(int(l - o), int(h - o)) for l, o, h in zip(lo, offset, hi))
    return scene_sl, local_sl


def overlay(dst: VoxelGrid, mask: np.ndarray, offset, class_id: int) -> int:
    """Write ``class_id`` into dst wherever the translated mask is set.

    Voxels falling outside dst are clipped silently. Returns the number of
    voxels written (last write wins on repeated overlay).
    """
    if dst.value_kind != "labels":
        raise ValueError("overlay target must be a label grid")
    win = clip_window(offset, mask.shape, dst.dims)
    if win is None:
        return 0
    scene_sl, local_sl = win
    sub = mask[local_sl]
    dst.data[scene_sl][sub] = class_id
    return int(sub.sum())
