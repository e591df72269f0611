"""Per-class spatial anchor statistics in normalized [0, 1]^3 coordinates.

For every class, each source volume contributes one point: the centroid of
the whole class voxel set (all instances pooled), divided per axis by
(dims - 1). The anchor distribution is a trivariate Gaussian with the
sample mean and the unbiased (n-1) sample covariance of those points; with
fewer than two contributing sources the covariance falls back to an
isotropic default so sampling stays well defined.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError, FitError
from .volume import VoxelGrid, norm_factors

FALLBACK_STD = 0.12
SAMPLE_EPS = 1e-6
CLAMP_LO = 0.02
CLAMP_HI = 0.98


@dataclass(eq=False)
class AnchorDistribution:
    class_id: int
    mu: np.ndarray          # (3,) mean, normalized coords
    sigma: np.ndarray       # (3, 3) covariance, symmetric
    n_samples: int          # sources that contained the class


@dataclass(eq=False)
class AnchorModel:
    distributions: dict[int, AnchorDistribution]
    n_classes: int


def fit_anchors(sources: list[VoxelGrid], class_map: dict[int, int]) -> AnchorModel:
    """Fit per-class anchor Gaussians from label volumes.

    class_map maps raw label values to contiguous class ids (as produced by
    the shape bank). A class absent from every source fails the fit; the
    error lists all such classes.
    """
    if not sources:
        raise FitError("no source volumes given")
    if not class_map:
        raise FitError("empty class map")

    points: dict[int, list[np.ndarray]] = {c: [] for c in class_map.values()}
    for src in sources:
        if src.value_kind != "labels":
            raise FitError("anchor fitting requires label volumes")
        factors = norm_factors(src.dims)
        for raw, cid in class_map.items():
            idx = np.nonzero(src.data == raw)
            if idx[0].size == 0:
                continue
            centroid = np.array([axis.mean() for axis in idx])
            points[cid].append(centroid / factors)

    missing = sorted(raw for raw, cid in class_map.items() if not points[cid])
    if missing:
        raise FitError(f"classes absent from every source (raw labels): {missing}")

    dists = {}
    for cid in sorted(points):
        pts = np.vstack(points[cid])
        mu = pts.mean(axis=0)
        n = pts.shape[0]
        if n >= 2:
            sigma = np.cov(pts, rowvar=False, ddof=1)
            sigma = (sigma + sigma.T) / 2.0
        else:
            sigma = np.eye(3) * FALLBACK_STD ** 2
        dists[cid] = AnchorDistribution(cid, mu, sigma, n)
    return AnchorModel(dists, len(dists))


def sample_anchor(model: AnchorModel, class_id: int, rng: np.random.Generator) -> np.ndarray:
    """Draw one anchor point: N(mu, sigma + eps*I) through the symmetric
    square root of the covariance, clamped into [0.02, 0.98]^3."""
    if class_id not in model.distributions:
        raise FitError(f"class {class_id} has no anchor distribution")
    d = model.distributions[class_id]
    cov = d.sigma + SAMPLE_EPS * np.eye(3)
    evals, evecs = np.linalg.eigh(cov)
    root = evecs @ np.diag(np.sqrt(np.clip(evals, 0.0, None))) @ evecs.T
    z = rng.standard_normal(3)
    return np.clip(d.mu + root @ z, CLAMP_LO, CLAMP_HI)


def save_anchors(model: AnchorModel, path) -> None:
    """Write the model as a plaintext table that round-trips exactly.

    Columns: class_id, mu (3 values), sigma row-major (9 values), n_samples.
    Floats use %.17g, which reproduces IEEE doubles bit-exactly.
    """
    path = Path(path)
    lines = [
        "# anatomy-forge anchors v1",
        "# class_id mu_x mu_y mu_z s_xx s_xy s_xz s_yx s_yy s_yz s_zx s_zy s_zz n_samples",
    ]
    for cid in sorted(model.distributions):
        d = model.distributions[cid]
        vals = [f"{v:.17g}" for v in list(d.mu) + list(d.sigma.ravel())]
        lines.append(f"{cid} " + " ".join(vals) + f" {d.n_samples}")
    path.write_text("\n".join(lines) + "\n")


def load_anchors(path) -> AnchorModel:
    """Read a table written by save_anchors."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot read anchors: {exc}") from exc
    dists = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) != 14:
            raise DataFormatError(f"{path}: line {lineno}: expected 14 columns, got {len(tokens)}")
        try:
            cid = int(tokens[0])
            vals = [float(t) for t in tokens[1:13]]
            n = int(tokens[13])
        except ValueError as exc:
            raise DataFormatError(f"{path}: line {lineno}: non-numeric value") from exc
        if cid in dists:
            raise DataFormatError(f"{path}: line {lineno}: duplicate class {cid}")
        mu = np.array(vals[:3])
        sigma = np.array(vals[3:]).reshape(3, 3)
        if not np.allclose(sigma, sigma.T, atol=1e-12):
            raise DataFormatError(f"{path}: line {lineno}: covariance is not symmetric")
        dists[cid] = AnchorDistribution(cid, mu, sigma, n)
    if not dists:
        raise DataFormatError(f"{path}: no anchor rows found")
    return AnchorModel(dists, len(dists))
