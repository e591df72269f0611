"""Turn a composed scene into the training pair: a label volume and a
contour-shell intensity volume.

Both outputs composite instances in descending placed-voxel-count order
(ties by placement step), so smaller structures overwrite larger ones and
survive containment. The image keeps only each instance's outermost
shell_thickness voxel layers, filled with one intensity per instance,
plus optional additive Gaussian noise, clamped to [0, 1].
"""

from dataclasses import dataclass

import numpy as np

from .placement import Placement, SceneState
from .volume import INTENSITY_DTYPE, LABEL_DTYPE, VoxelGrid, overlay, shell_mask


@dataclass
class RenderParams:
    shell_thickness: int = 1
    intensity_range: tuple[float, float] = (0.3, 1.0)
    background: float = 0.0
    noise_sigma: float = 0.02
    per_instance_intensity: bool = True

    def __post_init__(self):
        if self.shell_thickness < 1:
            raise ValueError("shell_thickness must be >= 1")
        lo, hi = self.intensity_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError(f"intensity_range must satisfy 0 <= lo <= hi <= 1, "
                             f"got {self.intensity_range}")
        if not 0.0 <= self.background <= 1.0:
            raise ValueError("background must be in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def compositing_order(placements: list[Placement]) -> list[Placement]:
    """Descending placed-voxel count, ties broken by placement step."""
    return sorted(placements, key=lambda p: (-p.voxels, p.step))


def render_labels(scene: SceneState) -> VoxelGrid:
    """Composite the per-instance masks into a uint8 class-label volume."""
    grid = VoxelGrid(np.zeros(scene.dims, dtype=LABEL_DTYPE), "labels")
    for p in compositing_order(scene.placements):
        overlay(grid, p.mask, p.start, p.class_id)
    return grid


def render_image(scene: SceneState, params: RenderParams,
                 rng: np.random.Generator) -> VoxelGrid:
    """Render the contour-shell intensity volume.

    Intensity draws happen per instance in compositing order, then a single
    noise field is drawn, so the stream layout is fixed for a given params
    set. With noise_sigma 0 the nonzero support is exactly the union of the
    instance shells.
    """
    img = np.full(scene.dims, params.background, dtype=np.float64)
    lo, hi = params.intensity_range
    mid = (lo + hi) / 2.0
    for p in compositing_order(scene.placements):
        value = float(rng.uniform(lo, hi)) if params.per_instance_intensity else mid
        shell = shell_mask(p.mask, params.shell_thickness)
        window = tuple(slice(s, s + d) for s, d in zip(p.start, p.mask.shape))
        img[window][shell] = value
    if params.noise_sigma > 0:
        img += rng.normal(0.0, params.noise_sigma, img.shape)
    np.clip(img, 0.0, 1.0, out=img)
    return VoxelGrid(img.astype(INTENSITY_DTYPE), "intensity")
