"""Anchored candidate placement: propose poses, score them against the
scene and the relation graph, and greedily compose whole scenes.

Scoring of a candidate pose combines three terms:

  * spatial tether: minus anchor_weight times the Euclidean distance
    between the candidate centroid and its anchor (normalized coords);
  * overlap penalty: minus overlap_weight times the IoU between the
    candidate mask (clipped to the scene) and everything already placed;
  * topology reward: containment_weight for each containment edge whose
    in-parent voxel fraction strictly exceeds its ratio threshold, plus
    adjacency_weight for each adjacency edge whose boundary-contact voxel
    count strictly exceeds its contact threshold. Edges whose reference
    class is not placed yet contribute nothing.

Exclusion edges are a hard filter, checked symmetrically: if the clipped
candidate's IoU with an excluded class strictly exceeds the edge ceiling,
the candidate is rejected outright (a distinct state, not a low score).
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .anchors import AnchorModel, sample_anchor
from .bank import AugmentParams, ShapeBank, sample_shape
from .errors import PlacementError, SceneError
from .relations import RelationGraph, Weights
from .volume import boundary_voxels, clip_window, mask_centroid, norm_factors, tight_bbox

MAX_OOB_RESAMPLES = 10
DEFAULT_RETRIES = 5


@dataclass(eq=False)
class Candidate:
    """One proposed pose: an augmented shape plus an integer scene offset."""

    class_id: int
    mask: np.ndarray
    offset: np.ndarray       # (3,) int voxel translation into the scene
    centroid: np.ndarray     # normalized scene coords of the full mask


def make_candidate(class_id: int, mask: np.ndarray, offset, scene_dims) -> Candidate:
    offset = np.asarray(offset, dtype=int)
    centroid = (mask_centroid(mask) + offset) / norm_factors(scene_dims)
    return Candidate(class_id, mask, offset, centroid)


@dataclass(frozen=True)
class ScoreBreakdown:
    """Per-term scores; total is None when the candidate was rejected."""

    spatial: float
    phys: float
    topo: float
    reject_reason: str | None = None

    @property
    def rejected(self) -> bool:
        return self.reject_reason is not None

    @property
    def total(self) -> float | None:
        if self.rejected:
            return None
        return self.spatial + self.phys + self.topo


@dataclass(eq=False)
class Placement:
    """An accepted pose, stored clipped to the scene frame."""

    step: int
    class_id: int
    offset: tuple[int, int, int]
    centroid: np.ndarray
    anchor: np.ndarray
    score: ScoreBreakdown
    start: tuple[int, int, int]   # clipped window origin in the scene
    mask: np.ndarray              # clipped window content (bool)
    voxels: int


class SceneState:
    """Scene under construction: per-class occupancy, running union,
    ordered placement log, and skip records."""

    def __init__(self, dims):
        dims = tuple(int(d) for d in dims)
        if len(dims) != 3 or min(dims) < 8:
            raise SceneError(f"scene dims must be 3 values >= 8, got {dims}")
        self.dims = dims
        self.union = np.zeros(dims, dtype=bool)
        self.union_count = 0
        self.class_masks: dict[int, np.ndarray] = {}
        self.class_counts: dict[int, int] = {}
        self.placements: list[Placement] = []
        self.skips: list[dict] = []

    def add_placement(self, class_id: int, candidate: Candidate, score: ScoreBreakdown,
                      anchor: np.ndarray) -> Placement:
        win = clip_window(candidate.offset, candidate.mask.shape, self.dims)
        if win is None:
            raise PlacementError("placement mask lies entirely outside the scene")
        scene_sl, local_sl = win
        sub = candidate.mask[local_sl]
        placement = Placement(
            step=len(self.placements),
            class_id=class_id,
            offset=tuple(int(v) for v in candidate.offset),
            centroid=np.asarray(candidate.centroid, dtype=float).copy(),
            anchor=np.asarray(anchor, dtype=float).copy(),
            score=score,
            start=tuple(s.start for s in scene_sl),
            mask=sub.copy(),
            voxels=int(sub.sum()),
        )
        self.add_raw(placement)
        return placement

    def add_raw(self, placement: "Placement") -> None:
        """Apply a pre-clipped placement to the occupancy grids."""
        sub = placement.mask
        scene_sl = tuple(slice(s, s + d) for s, d in zip(placement.start, sub.shape))
        cid = placement.class_id
        if cid not in self.class_masks:
            self.class_masks[cid] = np.zeros(self.dims, dtype=bool)
            self.class_counts[cid] = 0
        cwin = self.class_masks[cid][scene_sl]
        self.class_counts[cid] += int((sub & ~cwin).sum())
        cwin |= sub
        uwin = self.union[scene_sl]
        self.union_count += int((sub & ~uwin).sum())
        uwin |= sub
        self.placements.append(placement)


@dataclass
class SynthesisConfig:
    """Scene-level knobs; defaults mirror the shipped generation recipe."""

    dims: tuple[int, int, int] = (128, 128, 128)
    n_candidates: int = 40
    perturb_sigma: float = 0.12
    retries: int = DEFAULT_RETRIES
    instances_per_class: dict[int, int] | None = None
    augment: AugmentParams = field(default_factory=AugmentParams)
    weights: Weights | None = None       # override the graph's weights when set
    tau_in: float | None = None          # global containment-ratio override
    nu_contact: float | None = None      # global contact-count override
    tau_hard: float | None = None        # global exclusion-ceiling override
    seed: int = 0

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) != 3 or min(self.dims) < 8:
            raise ValueError(f"dims must be 3 values >= 8, got {self.dims}")
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")
        if self.perturb_sigma <= 0:
            raise ValueError("perturb_sigma must be positive")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.instances_per_class is not None:
            bad = {c: n for c, n in self.instances_per_class.items() if n < 0}
            if bad:
                raise ValueError(f"negative instance counts: {bad}")


def generate_candidates(class_id: int, shape: np.ndarray, anchor: np.ndarray, scene_dims,
                        n: int, sigma: float, rng: np.random.Generator) -> list[Candidate]:
    """Propose n poses around the anchor.

    Each pose target is anchor + N(0, sigma^2 I) in normalized coords,
    rounded to an integer offset that puts the shape centroid there. A draw
    whose clipped mask would be empty is redrawn up to 10 times, then the
    offset is clamped so the shape's tight bounding box sits inside the
    frame. Shapes larger than the scene on any axis cannot be posed at all.
    """
    dims = np.asarray(scene_dims, dtype=int)
    shape_dims = np.asarray(shape.shape)
    if np.any(shape_dims > dims):
        raise PlacementError(
            f"shape of dims {tuple(shape_dims)} exceeds scene dims {tuple(dims)}; "
            "rebuild it at a smaller scale")
    local_centroid = mask_centroid(shape)
    factors = norm_factors(dims)
    tlo, thi = tight_bbox(shape)
    candidates = []
    for _ in range(n):
        offset = None
        last = None
        for _ in range(1 + MAX_OOB_RESAMPLES):
            delta = rng.normal(0.0, sigma, 3)
            target = (anchor + delta) * factors
            off = np.rint(target - local_centroid).astype(int)
            last = off
            win = clip_window(off, shape.shape, dims)
            if win is not None and shape[win[1]].any():
                offset = off
                break
        if offset is None:
            # persistent out-of-frame draws: clamp the tight bbox fully inside
            offset = np.clip(last, -tlo, dims - 1 - thi)
        candidates.append(make_candidate(class_id, shape, offset, dims))
    return candidates


def score_candidate(candidate: Candidate, anchor: np.ndarray, scene: SceneState,
                    graph: RelationGraph, weights: Weights | None = None,
                    tau_in: float | None = None, nu_contact: float | None = None,
                    tau_hard: float | None = None) -> ScoreBreakdown:
    """Score one candidate against the current scene. See the module
    docstring for the exact terms; thresholds default to each edge's own."""
    w = weights if weights is not None else graph.weights

    d = np.asarray(candidate.centroid, dtype=float) - np.asarray(anchor, dtype=float)
    dx, dy, dz = float(d[0]), float(d[1]), float(d[2])
    spatial = -w.anchor * math.sqrt(dx * dx + dy * dy + dz * dz)

    win = clip_window(candidate.offset, candidate.mask.shape, scene.dims)
    if win is None:
        raise PlacementError("candidate lies entirely outside the scene")
    scene_sl, local_sl = win
    sub = candidate.mask[local_sl]
    m_count = int(sub.sum())
    if m_count == 0:
        raise PlacementError("candidate's clipped mask is empty")

    inter = int((sub & scene.union[scene_sl]).sum())
    denom = m_count + scene.union_count - inter
    overlap_iou = inter / denom if denom else 0.0
    phys = -w.overlap * overlap_iou

    for edge, partner in graph.exclusion_partners(candidate.class_id):
        pmask = scene.class_masks.get(partner)
        if pmask is None:
            continue
        pinter = int((sub & pmask[scene_sl]).sum())
        pdenom = m_count + scene.class_counts[partner] - pinter
        piou = pinter / pdenom if pdenom else 0.0
        ceiling = tau_hard if tau_hard is not None else edge.threshold
        if piou > ceiling:
            return ScoreBreakdown(spatial, phys, 0.0,
                                  reject_reason=f"exclusion {edge.a}~{edge.b} "
                                                f"iou {piou:.4f} > {ceiling:g}")

    topo = 0.0
    for edge in graph.edges_for(candidate.class_id, "containment"):
        pmask = scene.class_masks.get(edge.b)
        if pmask is None:
            continue
        inside = int((sub & pmask[scene_sl]).sum())
        ratio = tau_in if tau_in is not None else edge.threshold
        if inside / m_count > ratio:
            topo += w.containment
    contact_boundary = None
    for edge in graph.edges_for(candidate.class_id, "adjacency"):
        pmask = scene.class_masks.get(edge.b)
        if pmask is None:
            continue
        if contact_boundary is None:
            contact_boundary = boundary_voxels(sub)
        contact = int((contact_boundary & pmask[scene_sl]).sum())
        minimum = nu_contact if nu_contact is not None else edge.threshold
        if contact > minimum:
            topo += w.adjacency
    return ScoreBreakdown(spatial, phys, topo)


def select_best(scored: list[tuple[Candidate, ScoreBreakdown]]) -> int | None:
    """Index of the highest-total candidate; exact ties keep the lowest
    index; None when every candidate was rejected."""
    best_idx = None
    best_total = None
    for i, (_, breakdown) in enumerate(scored):
        total = breakdown.total
        if total is None:
            continue
        if best_total is None or total > best_total:
            best_idx, best_total = i, total
    return best_idx


def placement_order(bank: ShapeBank) -> list[int]:
    """Classes sorted by descending mean entry volume (ties: ascending id),
    so large structures claim space before small ones."""
    return sorted(bank.class_ids, key=lambda c: (-bank.mean_volume(c), c))


def synthesize_scene(bank: ShapeBank, anchors: AnchorModel, graph: RelationGraph,
                     config: SynthesisConfig, rng: np.random.Generator) -> SceneState:
    """Greedily compose a scene.

    Classes are visited in placement_order; each instance draws an augmented
    shape and an anchor, proposes n_candidates poses, scores them, and keeps
    the best non-rejected one. When every pose is rejected (or the shape
    cannot fit the scene), the attempt is retried with a fresh shape and
    anchor up to config.retries times, then the instance is skipped with a
    recorded reason. A scene with zero placements is an error.
    """
    scene = SceneState(config.dims)
    schedule = config.instances_per_class or {}
    for class_id in placement_order(bank):
        for _ in range(schedule.get(class_id, 1)):
            placed = False
            reason = "unattempted"
            for _ in range(1 + config.retries):
                shape = sample_shape(bank, class_id, config.augment, rng)
                anchor = sample_anchor(anchors, class_id, rng)
                try:
                    cands = generate_candidates(class_id, shape, anchor, scene.dims,
                                                config.n_candidates, config.perturb_sigma, rng)
                except PlacementError as exc:
                    reason = str(exc)
                    continue
                scored = [(c, score_candidate(c, anchor, scene, graph,
                                              weights=config.weights, tau_in=config.tau_in,
                                              nu_contact=config.nu_contact,
                                              tau_hard=config.tau_hard))
                          for c in cands]
                idx = select_best(scored)
                if idx is None:
                    reason = "all candidates rejected"
                    continue
                cand, breakdown = scored[idx]
                scene.add_placement(class_id, cand, breakdown, anchor)
                placed = True
                break
            if not placed:
                scene.skips.append({
                    "class_id": class_id,
                    "attempts": 1 + config.retries,
                    "reason": reason,
                })
    if not scene.placements:
        raise SceneError("scene synthesis placed nothing "
                         f"({len(scene.skips)} skipped instances)")
    return scene


@dataclass
class ValidationReport:
    """Post-hoc recheck of a scene against a graph, replayed step by step
    exactly as the engine saw it."""

    violations: list[dict] = field(default_factory=list)
    exclusion_checks: int = 0
    containment_checks: int = 0
    containment_satisfied: int = 0
    adjacency_checks: int = 0
    adjacency_satisfied: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_scene(scene: SceneState, graph: RelationGraph,
                   tau_in: float | None = None, nu_contact: float | None = None,
                   tau_hard: float | None = None) -> ValidationReport:
    """Recompute every exclusion IoU, containment ratio, and contact count
    from the stored per-instance masks, each against the prefix of earlier
    placements (the state the engine scored against)."""
    report = ValidationReport()
    prefix = SceneState(scene.dims)
    for placement in scene.placements:
        sub = placement.mask
        scene_sl = tuple(slice(s, s + d) for s, d in zip(placement.start, sub.shape))
        m_count = placement.voxels
        for edge, partner in graph.exclusion_partners(placement.class_id):
            pmask = prefix.class_masks.get(partner)
            if pmask is None:
                continue
            report.exclusion_checks += 1
            pinter = int((sub & pmask[scene_sl]).sum())
            pdenom = m_count + prefix.class_counts[partner] - pinter
            piou = pinter / pdenom if pdenom else 0.0
            ceiling = tau_hard if tau_hard is not None else edge.threshold
            if piou > ceiling:
                report.violations.append({
                    "step": placement.step,
                    "class_id": placement.class_id,
                    "partner": partner,
                    "iou": piou,
                    "ceiling": ceiling,
                })
        for edge in graph.edges_for(placement.class_id, "containment"):
            pmask = prefix.class_masks.get(edge.b)
            if pmask is None:
                continue
            report.containment_checks += 1
            inside = int((sub & pmask[scene_sl]).sum())
            ratio = tau_in if tau_in is not None else edge.threshold
            if inside / m_count > ratio:
                report.containment_satisfied += 1
        contact_boundary = None
        for edge in graph.edges_for(placement.class_id, "adjacency"):
            pmask = prefix.class_masks.get(edge.b)
            if pmask is None:
                continue
            report.adjacency_checks += 1
            if contact_boundary is None:
                contact_boundary = boundary_voxels(sub)
            contact = int((contact_boundary & pmask[scene_sl]).sum())
            minimum = nu_contact if nu_contact is not None else edge.threshold
            if contact > minimum:
                report.adjacency_satisfied += 1
        prefix.add_raw(replace_step(placement, len(prefix.placements)))
    return report


def replace_step(placement: Placement, step: int) -> Placement:
    """Copy of a placement with a renumbered step (used when replaying)."""
    return replace(placement, step=step)
