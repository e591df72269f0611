import numpy as np
import pytest

from anatomy_forge.anchors import (FALLBACK_STD, fit_anchors, load_anchors,
                                   sample_anchor, save_anchors)
from anatomy_forge.errors import DataFormatError, FitError
from anatomy_forge.volume import VoxelGrid


def _point_source(voxel, dims=(21, 21, 21), label=4):
    data = np.zeros(dims, dtype=np.uint8)
    data[voxel] = label
    return VoxelGrid(data, "labels")


def test_fit_known_variance():
    # five subjects with the organ at x = 8..12 of 21 voxels: normalized
    # positions 0.40 .. 0.60, sample variance 0.00625 on x, 0 elsewhere
    sources = [_point_source((8 + i, 10, 10)) for i in range(5)]
    model = fit_anchors(sources, {4: 1})
    d = model.distributions[1]
    assert d.n_samples == 5
    assert d.mu == pytest.approx([0.5, 0.5, 0.5], abs=1e-15)
    assert d.sigma[0, 0] == pytest.approx(0.00625, rel=1e-12)
    assert d.sigma[1, 1] == 0.0 and d.sigma[2, 2] == 0.0
    assert np.array_equal(d.sigma, d.sigma.T)


def test_fit_single_sample_falls_back():
    model = fit_anchors([_point_source((10, 10, 10))], {4: 1})
    d = model.distributions[1]
    assert d.n_samples == 1
    assert np.array_equal(d.sigma, np.eye(3) * FALLBACK_STD ** 2)


def test_fit_centroid_spans_all_instances():
    data = np.zeros((21, 21, 21), dtype=np.uint8)
    data[4, 10, 10] = 4
    data[16, 10, 10] = 4     # second blob of the same class
    model = fit_anchors([VoxelGrid(data, "labels")], {4: 1})
    assert model.distributions[1].mu == pytest.approx([0.5, 0.5, 0.5])


def test_fit_missing_class_lists_raw_labels():
    with pytest.raises(FitError, match=r"\[6, 9\]"):
        fit_anchors([_point_source((10, 10, 10))], {4: 1, 9: 2, 6: 3})


def test_fit_rejects_intensity_sources():
    grid = VoxelGrid(np.zeros((8, 8, 8), dtype=np.float32), "intensity")
    with pytest.raises(FitError, match="label"):
        fit_anchors([grid], {1: 1})


def test_sample_anchor_clamped():
    model = fit_anchors([_point_source((20, 20, 0))], {4: 1})  # mu = (1, 1, 0)
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = sample_anchor(model, 1, rng)
        assert np.all(a >= 0.02) and np.all(a <= 0.98)
    with pytest.raises(FitError):
        sample_anchor(model, 99, rng)


def test_sample_anchor_matches_distribution():
    sources = [_point_source((8 + i, 9 + i % 3, 10)) for i in range(6)]
    model = fit_anchors(sources, {4: 1})
    d = model.distributions[1]
    rng = np.random.default_rng(7)
    draws = np.vstack([sample_anchor(model, 1, rng) for _ in range(4000)])
    assert draws.mean(axis=0) == pytest.approx(d.mu, abs=0.01)
    emp = np.cov(draws, rowvar=False, ddof=1)
    assert emp[0, 0] == pytest.approx(d.sigma[0, 0] + 1e-6, abs=0.002)


def test_save_load_exact_round_trip(tmp_path, demo_anchors):
    path = tmp_path / "anchors.txt"
    save_anchors(demo_anchors, path)
    back = load_anchors(path)
    assert back.n_classes == demo_anchors.n_classes
    for cid, d in demo_anchors.distributions.items():
        b = back.distributions[cid]
        assert np.array_equal(b.mu, d.mu)          # %.17g is bit-exact
        assert np.array_equal(b.sigma, d.sigma)
        assert b.n_samples == d.n_samples
    path2 = tmp_path / "again.txt"
    save_anchors(back, path2)
    assert path.read_text() == path2.read_text()


def test_load_rejects_malformed_tables(tmp_path):
    good = "1 " + " ".join(["0.5"] * 3 + ["0.01", "0", "0", "0", "0.01", "0", "0", "0", "0.01"]) + " 3"
    cases = {
        "short.txt": ("1 0.5 0.5 0.5 2", "14 columns"),
        "alpha.txt": (good.replace("0.5", "x", 1), "non-numeric"),
        "dup.txt": (good + "\n" + good, "duplicate"),
        "asym.txt": ("1 0.5 0.5 0.5 0.01 0.5 0 0 0.01 0 0 0 0.01 3", "symmetric"),
        "empty.txt": ("# nothing here", "no anchor rows"),
    }
    for name, (content, needle) in cases.items():
        f = tmp_path / name
        f.write_text(content + "\n")
        with pytest.raises(DataFormatError, match=needle):
            load_anchors(f)


def test_fit_requires_inputs():
    with pytest.raises(FitError):
        fit_anchors([], {1: 1})
    with pytest.raises(FitError):
        fit_anchors([_point_source((1, 1, 1))], {})
