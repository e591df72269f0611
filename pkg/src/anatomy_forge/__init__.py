"""Anatomy-aware synthetic 3D volume generation.

Builds a bank of organ shapes from labeled volumes, fits per-class anchor
Gaussians, and composes new image/label pairs under relation-graph
constraints (containment, adjacency, exclusion).
"""

from .anchors import (AnchorDistribution, AnchorModel, fit_anchors, load_anchors,
                      sample_anchor, save_anchors)
from .bank import (AugmentParams, ShapeBank, ShapeEntry, augment, build_bank,
                   load_bank, sample_shape, save_bank)
from .errors import (BankError, DataFormatError, FitError, ForgeError,
                     GraphParseError, NiftiError, PlacementError, SceneError)
from .nifti import read_nifti, write_nifti
from .pipeline import (generate_pair, load_manifest, manifest_to_scene,
                       pair_filenames, read_dataset_index, scene_rng,
                       scene_to_manifest, write_dataset_index, write_pair)
from .placement import (Placement, SceneState, SynthesisConfig, ValidationReport,
                        generate_candidates, placement_order, score_candidate,
                        select_best, synthesize_scene, validate_scene)
from .relations import RelationEdge, RelationGraph, Weights, load_graph, serialize_graph
from .render import RenderParams, render_image, render_labels
from .volume import (VoxelGrid, boundary_voxels, connected_components, empty_labels,
                     iou, mask_centroid, shell_mask, tight_bbox)

__version__ = "0.1.0"

__all__ = [
    "AnchorDistribution", "AnchorModel", "AugmentParams", "BankError",
    "DataFormatError", "FitError", "ForgeError", "GraphParseError", "NiftiError",
    "Placement", "PlacementError", "RelationEdge", "RelationGraph", "RenderParams",
    "SceneError", "SceneState", "ShapeBank", "ShapeEntry", "SynthesisConfig",
    "ValidationReport", "VoxelGrid", "Weights", "augment", "boundary_voxels",
    "build_bank", "connected_components", "empty_labels", "fit_anchors",
    "generate_candidates", "generate_pair", "iou", "load_anchors", "load_bank",
    "load_graph", "load_manifest", "manifest_to_scene", "mask_centroid",
    "pair_filenames", "placement_order", "read_dataset_index", "read_nifti",
    "render_image", "render_labels", "sample_anchor", "sample_shape", "save_anchors",
    "save_bank", "scene_rng", "scene_to_manifest", "score_candidate", "select_best",
    "serialize_graph", "shell_mask", "synthesize_scene", "tight_bbox",
    "validate_scene", "write_dataset_index", "write_nifti", "write_pair",
]
