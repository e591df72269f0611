"""Shape bank: harvest per-instance organ masks from label volumes and
serve freshly augmented copies at synthesis time.

Harvesting splits each selected raw class into 26-connected components,
drops fragments below a minimum voxel count, and stores every surviving
instance cropped to its bounding box plus one voxel of background margin.
Raw label values are remapped onto contiguous class ids 1..C in ascending
raw-label order.

Augmentation draws, in this fixed order: per-axis mirror flips, one of the
24 proper axis-aligned rotations, then an isotropic nearest-neighbour
rescale; the result is re-cropped tight plus a one-voxel margin. A rescale
that would erase the mask entirely is skipped so a sample is never empty.
"""

import itertools
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BankError, DataFormatError
from .volume import VoxelGrid, connected_components, crop_margin, pad_tight, tight_bbox

BANK_MAGIC = b"AFBANK01"
DEFAULT_MIN_COMPONENT = 8


@dataclass(eq=False)
class ShapeEntry:
    """One harvested organ instance: cropped mask plus provenance."""

    class_id: int
    mask: np.ndarray
    source_id: str
    raw_class: int


@dataclass
class AugmentParams:
    """Stochastic augmentation knobs applied per drawn sample."""

    flip_prob: float = 0.5
    rotation_enabled: bool = True
    scale_range: tuple[float, float] = (0.85, 1.25)

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError(f"flip_prob must be in [0, 1], got {self.flip_prob}")
        lo, hi = self.scale_range
        if not (0.0 < lo <= hi):
            raise ValueError(f"scale_range must satisfy 0 < lo <= hi, got {self.scale_range}")


IDENTITY_AUGMENT = AugmentParams(flip_prob=0.0, rotation_enabled=False, scale_range=(1.0, 1.0))


@dataclass(eq=False)
class ShapeBank:
    """All harvested entries plus the raw-label remapping."""

    entries: list[ShapeEntry]
    class_map: dict[int, int]
    n_classes: int
    _by_class: dict[int, list[ShapeEntry]] = field(init=False, repr=False)

    def __post_init__(self):
        if not self.entries:
            raise BankError("shape bank has no entries")
        self._by_class = {}
        for entry in self.entries:
            self._by_class.setdefault(entry.class_id, []).append(entry)

    def entries_for(self, class_id: int) -> list[ShapeEntry]:
        if class_id not in self._by_class:
            raise BankError(f"class {class_id} has no entries in the bank")
        return self._by_class[class_id]

    @property
    def class_ids(self) -> list[int]:
        return sorted(self._by_class)

    def mean_volume(self, class_id: int) -> float:
        """Mean voxel count over the stored (un-augmented) entries of a class."""
        entries = self.entries_for(class_id)
        return float(np.mean([int(e.mask.sum()) for e in entries]))


def build_bank(sources: list[VoxelGrid], raw_classes, source_ids=None,
               min_component: int = DEFAULT_MIN_COMPONENT) -> ShapeBank:
    """Harvest a ShapeBank from label volumes.

    raw_classes: raw label values to harvest; they are remapped onto 1..C in
    ascending raw order. Any class with no surviving component in any source
    fails the build, listing every missing class.
    """
    if not sources:
        raise BankError("no source volumes given")
    raw_sorted = sorted(set(int(c) for c in raw_classes))
    if not raw_sorted:
        raise BankError("no classes selected")
    if any(c <= 0 for c in raw_sorted):
        raise BankError("raw class ids must be positive (0 is background)")
    if source_ids is None:
        source_ids = [f"src{i:03d}" for i in range(len(sources))]
    if len(source_ids) != len(sources):
        raise BankError("source_ids length must match sources")

    class_map = {raw: i + 1 for i, raw in enumerate(raw_sorted)}
    entries: list[ShapeEntry] = []
    for src, sid in zip(sources, source_ids):
        if src.value_kind != "labels":
            raise BankError(f"source {sid} is not a label volume")
        for raw in raw_sorted:
            for comp in connected_components(src, raw):
                if int(comp.sum()) < min_component:
                    continue
                entries.append(ShapeEntry(
                    class_id=class_map[raw],
                    mask=crop_margin(comp, 1),
                    source_id=str(sid),
                    raw_class=raw,
                ))

    present = {e.raw_class for e in entries}
    missing = [raw for raw in raw_sorted if raw not in present]
    if missing:
        raise BankError(
            "classes missing from all sources (no component >= "
            f"{min_component} voxels): {missing}")
    return ShapeBank(entries, class_map, len(raw_sorted))


def _rotations24():
    """The 24 proper axis-aligned rotations as (axis permutation, flip axes).

    A signed permutation is a rotation iff its determinant is +1: even
    permutations need an even number of sign flips, odd ones an odd number.
    Enumeration order is fixed (lexicographic) so indices are stable.
    """
    rots = []
    for perm in itertools.permutations(range(3)):
        inversions = sum(1 for i in range(3) for j in range(i + 1, 3) if perm[i] > perm[j])
        parity = -1 if inversions % 2 else 1
        for signs in itertools.product((1, -1), repeat=3):
            if parity * signs[0] * signs[1] * signs[2] == 1:
                flip_axes = tuple(i for i, s in enumerate(signs) if s < 0)
                rots.append((perm, flip_axes))
    return rots


ROTATIONS_24 = _rotations24()


def nn_rescale(mask: np.ndarray, factor: float) -> np.ndarray:
    """Isotropic nearest-neighbour rescale of a binary mask.

    Output dims are round(in_dims * factor), floored at 1; output voxel i
    samples input voxel floor((i + 0.5) * in/out).
    """
    if factor <= 0:
        raise ValueError("scale factor must be positive")
    in_dims = np.asarray(mask.shape)
    out_dims = np.maximum(np.rint(in_dims * factor).astype(int), 1)
    grids = []
    for axis in range(3):
        src = np.floor((np.arange(out_dims[axis]) + 0.5) * in_dims[axis] / out_dims[axis])
        grids.append(np.clip(src.astype(int), 0, in_dims[axis] - 1))
    return mask[np.ix_(grids[0], grids[1], grids[2])]


def augment(entry: ShapeEntry, params: AugmentParams, rng: np.random.Generator) -> np.ndarray:
    """Draw one augmented copy of an entry's mask.

    Fixed draw order (three flip uniforms, one rotation index when enabled,
    one scale uniform) keeps streams reproducible for a given params set.
    """
    m = entry.mask
    flips = rng.random(3)
    axes = tuple(i for i in range(3) if flips[i] < params.flip_prob)
    if axes:
        m = np.flip(m, axis=axes)
    if params.rotation_enabled:
        perm, flip_axes = ROTATIONS_24[int(rng.integers(len(ROTATIONS_24)))]
        m = np.transpose(m, perm)
        if flip_axes:
            m = np.flip(m, axis=flip_axes)
    lo, hi = tight_bbox(m)
    tight = m[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1]
    factor = float(rng.uniform(*params.scale_range))
    scaled = nn_rescale(tight, factor)
    if scaled.any():
        tight = scaled
    return pad_tight(tight, 1)


def sample_shape(bank: ShapeBank, class_id: int, params: AugmentParams,
                 rng: np.random.Generator) -> np.ndarray:
    """Uniformly pick one entry of the class and return an augmented copy."""
    entries = bank.entries_for(class_id)
    entry = entries[int(rng.integers(len(entries)))]
    return augment(entry, params, rng)


def save_bank(bank: ShapeBank, path) -> None:
    """Write the bank as one little-endian binary file plus a plaintext
    class-map sidecar (<stem>.classes.txt)."""
    path = Path(path)
    chunks = [BANK_MAGIC,
              struct.pack("<III", bank.n_classes, len(bank.class_map), len(bank.entries))]
    for raw in sorted(bank.class_map):
        chunks.append(struct.pack("<II", raw, bank.class_map[raw]))
    for e in bank.entries:
        sid = e.source_id.encode("utf-8")
        dx, dy, dz = e.mask.shape
        chunks.append(struct.pack("<IIH", e.class_id, e.raw_class, len(sid)))
        chunks.append(sid)
        chunks.append(struct.pack("<III", dx, dy, dz))
        chunks.append(np.packbits(e.mask.ravel(order="F")).tobytes())
    path.write_bytes(b"".join(chunks))

    sidecar = path.with_suffix(".classes.txt")
    lines = ["# raw_label class_id"]
    lines += [f"{raw} {bank.class_map[raw]}" for raw in sorted(bank.class_map)]
    sidecar.write_text("\n".join(lines) + "\n")


def load_bank(path) -> ShapeBank:
    """Read a bank written by save_bank; round-trips bit-exactly."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot read bank: {exc}") from exc
    if blob[:8] != BANK_MAGIC:
        raise DataFormatError(f"{path}: not a shape-bank file (bad magic)")
    off = 8

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(blob):
            raise DataFormatError(f"{path}: truncated bank file")
        vals = struct.unpack_from(fmt, blob, off)
        off += size
        return vals

    n_classes, n_map, n_entries = take("<III")
    class_map = {}
    for _ in range(n_map):
        raw, mapped = take("<II")
        class_map[raw] = mapped
    entries = []
    for _ in range(n_entries):
        class_id, raw_class, sid_len = take("<IIH")
        if off + sid_len > len(blob):
            raise DataFormatError(f"{path}: truncated bank file")
        sid = blob[off:off + sid_len].decode("utf-8")
        off += sid_len
        dx, dy, dz = take("<III")
        n = dx * dy * dz
        nbytes = (n + 7) // 8
        if off + nbytes > len(blob):
            raise DataFormatError(f"{path}: truncated bank file")
        bits = np.unpackbits(np.frombuffer(blob, dtype=np.uint8, count=nbytes, offset=off),
                             count=n).astype(bool)
        off += nbytes
        mask = bits.reshape((dx, dy, dz), order="F")
        entries.append(ShapeEntry(class_id, mask, sid, raw_class))
    return ShapeBank(entries, class_map, n_classes)
