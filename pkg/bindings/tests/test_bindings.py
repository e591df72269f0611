"""Bindings tests.

The reference producer is always the real CLI (in-process main() for
fixtures, a real subprocess inside next_pair), and the parity test compares
bindings-decoded arrays against CLI-written files elementwise, which is the
package's core guarantee.
"""

import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from anatomy_forge.cli import main as cli_main
from anatomy_forge.demo import main as demo_main
from anatomy_forge.nifti import read_nifti, write_nifti
from anatomy_forge.volume import VoxelGrid

from anatomy_forge_bindings import (BindingsError, VolumeFormatError,
                                    next_pair, open_generator, read_dataset,
                                    read_volume)

DIMS = (48, 48, 48)
SEED = 42
COUNT = 10


@pytest.fixture(scope="module")
def assets(tmp_path_factory):
    root = tmp_path_factory.mktemp("bindings_assets")
    corpus = root / "corpus"
    assert demo_main(["--out", str(corpus), "--subjects", "3",
                      "--dims", "64,64,64"]) == 0
    bank = root / "bank.afb"
    anchors = root / "anchors.txt"
    graph = corpus / "relations.txt"
    assert cli_main(["build-bank", "--sources", str(corpus),
                     "--classes", str(corpus / "classes.txt"),
                     "--out", str(bank)]) == 0
    assert cli_main(["fit-anchors", "--sources", str(corpus),
                     "--classes", str(corpus / "classes.txt"),
                     "--out", str(anchors)]) == 0
    reference = root / "reference"
    assert cli_main(["synthesize", "--bank", str(bank), "--anchors", str(anchors),
                     "--graph", str(graph), "--out-dir", str(reference),
                     "--count", str(COUNT), "--seed", str(SEED),
                     "--dims", ",".join(str(d) for d in DIMS),
                     "--jobs", "1"]) == 0
    return {"bank": bank, "anchors": anchors, "graph": graph,
            "reference": reference}


def _open(assets, mode, **extra):
    config = {"seed": SEED, "dims": DIMS}
    config.update(extra.pop("config", {}))
    return open_generator(assets["bank"], assets["anchors"], assets["graph"],
                          config=config, mode=mode, **extra)


def _canon(manifest):
    return json.loads(json.dumps(manifest, sort_keys=True))


def test_parity_with_cli_outputs(assets, capsys):
    dataset = read_dataset(assets["reference"])
    assert len(dataset) == COUNT
    checked = 0
    for mode in ("in-process", "subprocess"):
        handle = _open(assets, mode)
        for position in range(COUNT):
            image_b, labels_b, manifest_b = next_pair(handle, position)
            image_c, labels_c, manifest_c = dataset[position]
            assert image_b.dtype == np.float32 and image_c.dtype == np.float32
            assert labels_b.dtype == np.uint8 and labels_c.dtype == np.uint8
            assert np.array_equal(image_b, image_c), (mode, position)
            assert np.array_equal(labels_b, labels_c), (mode, position)
            assert _canon(manifest_b) == manifest_c, (mode, position)
            checked += 1
    with capsys.disabled():
        print(f"PASS bindings parity: seed {SEED}, indices 0-{COUNT - 1}, "
              f"{checked} pairs equal to CLI volumes elementwise "
              f"(both modes)", flush=True)


def test_next_pair_is_pure_per_index(assets):
    handle = _open(assets, "in-process")
    a_img, a_lab, a_man = next_pair(handle, 3)
    b_img, b_lab, b_man = next_pair(handle, 3)
    assert np.array_equal(a_img, b_img)
    assert np.array_equal(a_lab, b_lab)
    assert _canon(a_man) == _canon(b_man)
    c_img, _, _ = next_pair(handle, 4)
    assert not np.array_equal(a_img, c_img)


def test_handle_shareable_across_threads(assets):
    handle = _open(assets, "in-process")
    serial = [next_pair(handle, i)[1] for i in range(4)]
    with ThreadPoolExecutor(max_workers=4) as pool:
        threaded = list(pool.map(lambda i: next_pair(handle, i)[1], range(4)))
    for want, got in zip(serial, threaded):
        assert np.array_equal(want, got)


def test_auto_mode_prefers_in_process(assets):
    handle = _open(assets, "auto")
    assert handle.mode == "in-process"


def test_negative_index_rejected(assets):
    handle = _open(assets, "in-process")
    with pytest.raises(ValueError, match="non-negative"):
        next_pair(handle, -1)
    handle = _open(assets, "subprocess")
    with pytest.raises(ValueError, match="non-negative"):
        next_pair(handle, -2)


def test_config_overrides_reach_manifests(assets):
    for mode in ("in-process", "subprocess"):
        handle = _open(assets, mode, config={"n_candidates": 8, "tau_hard": 0.5,
                                             "lambda_adj": 0.25,
                                             "rotation_enabled": False})
        _, _, manifest = next_pair(handle, 0)
        snap = manifest["config"]
        assert snap["n_candidates"] == 8
        assert snap["tau_hard"] == 0.5
        assert snap["weights"]["adjacency"] == 0.25
        assert snap["weights"]["anchor"] == 1.0      # merged from the graph
        assert snap["augment"]["rotation_enabled"] is False
        assert snap["seed"] == SEED


def test_modes_agree_under_overrides(assets):
    config = {"n_candidates": 6, "shell_thickness": 2, "noise_sigma": 0.0,
              "scale_range": (0.9, 1.1), "intensity_range": (0.4, 0.9)}
    pairs = {}
    for mode in ("in-process", "subprocess"):
        handle = _open(assets, mode, config=config)
        pairs[mode] = next_pair(handle, 2)
    assert np.array_equal(pairs["in-process"][0], pairs["subprocess"][0])
    assert np.array_equal(pairs["in-process"][1], pairs["subprocess"][1])
    assert _canon(pairs["in-process"][2]) == _canon(pairs["subprocess"][2])


def test_open_rejects_bad_inputs(assets, tmp_path):
    with pytest.raises(Exception, match="No such file"):
        open_generator(tmp_path / "missing.afb", assets["anchors"],
                       assets["graph"], mode="in-process")
    with pytest.raises(Exception, match="No such file"):
        open_generator(tmp_path / "missing.afb", assets["anchors"],
                       assets["graph"], mode="subprocess")
    fake = tmp_path / "fake.afb"
    fake.write_bytes(b"NOTABANK" + b"\x00" * 64)
    with pytest.raises(Exception, match="bad magic"):
        open_generator(fake, assets["anchors"], assets["graph"],
                       mode="subprocess")
    with pytest.raises(ValueError, match="unknown config keys"):
        open_generator(assets["bank"], assets["anchors"], assets["graph"],
                       config={"candidates": 8})
    with pytest.raises(ValueError, match="unknown mode"):
        open_generator(assets["bank"], assets["anchors"], assets["graph"],
                       mode="native")
    with pytest.raises(ValueError, match="seed"):
        open_generator(assets["bank"], assets["anchors"], assets["graph"],
                       config={"seed": -1})


def test_subprocess_surfaces_cli_errors(assets, tmp_path):
    bad_graph = tmp_path / "bad.txt"
    bad_graph.write_text("exclusion 1 1 0.5\n")
    handle = open_generator(assets["bank"], assets["anchors"], bad_graph,
                            config={"seed": SEED, "dims": DIMS},
                            mode="subprocess")
    with pytest.raises(BindingsError, match="itself"):
        next_pair(handle, 0)


def test_read_dataset_view(assets):
    dataset = read_dataset(assets["reference"])
    assert len(dataset) == COUNT
    assert dataset.indices == list(range(COUNT))
    assert dataset.seed == SEED
    assert dataset.dims == DIMS
    image, labels, manifest = dataset[-1]
    assert manifest["index"] == COUNT - 1
    assert image.shape == DIMS and labels.shape == DIMS
    with pytest.raises(IndexError):
        dataset[COUNT]
    seen = sum(1 for _ in dataset)
    assert seen == COUNT


def test_read_dataset_rejects_garbage(tmp_path):
    with pytest.raises(BindingsError, match="cannot read dataset index"):
        read_dataset(tmp_path)
    (tmp_path / "dataset.json").write_text("{nope")
    with pytest.raises(BindingsError, match="invalid JSON"):
        read_dataset(tmp_path)
    (tmp_path / "dataset.json").write_text(json.dumps({"schema": "other/v9"}))
    with pytest.raises(BindingsError, match="unknown dataset schema"):
        read_dataset(tmp_path)


def test_lite_reader_matches_full_reader(tmp_path):
    rng = np.random.default_rng(13)
    grids = [
        VoxelGrid(rng.integers(0, 9, size=(7, 5, 6)).astype(np.uint8), "labels"),
        VoxelGrid(rng.integers(0, 500, size=(5, 6, 7)).astype(np.int16), "labels"),
        VoxelGrid(rng.random((6, 7, 5), dtype=np.float32), "intensity"),
    ]
    for i, grid in enumerate(grids):
        for suffix in (".nii", ".nii.gz"):
            path = tmp_path / f"vol_{i}{suffix}"
            write_nifti(grid, path)
            decoded = read_volume(path)
            assert decoded.dtype == grid.data.dtype
            assert np.array_equal(decoded, grid.data)
            assert np.array_equal(decoded, read_nifti(path).data)
            decoded[0, 0, 0] = 1          # writable copy, not a frozen view


def test_lite_reader_rejects_what_it_cannot_decode(tmp_path):
    grid = VoxelGrid(np.ones((4, 4, 4), dtype=np.float32), "intensity")
    scaled = tmp_path / "scaled.nii"
    meta = {
        "pixdim": [1.0] * 4 + [0.0] * 4,
        "qform_code": 0, "sform_code": 1,
        "quatern": [0.0] * 3, "qoffset": [0.0] * 3,
        "srow_x": [1.0, 0.0, 0.0, 0.0],
        "srow_y": [0.0, 1.0, 0.0, 0.0],
        "srow_z": [0.0, 0.0, 1.0, 0.0],
        "scl_slope": 2.0, "scl_inter": 0.0,
    }
    write_nifti(VoxelGrid(grid.data, "intensity", meta=meta), scaled)
    with pytest.raises(VolumeFormatError, match="scl scaling"):
        read_volume(scaled)

    short = tmp_path / "short.nii"
    short.write_bytes(b"\x00" * 100)
    with pytest.raises(VolumeFormatError, match="shorter than"):
        read_volume(short)

    ok = tmp_path / "ok.nii"
    write_nifti(grid, ok)
    truncated = tmp_path / "truncated.nii"
    truncated.write_bytes(ok.read_bytes()[:-40])
    with pytest.raises(VolumeFormatError, match="truncated payload"):
        read_volume(truncated)

    not_nifti = tmp_path / "junk.nii"
    not_nifti.write_bytes(b"\x07" * 400)
    with pytest.raises(VolumeFormatError, match="sizeof_hdr"):
        read_volume(not_nifti)
