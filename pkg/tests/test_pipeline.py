import json

import numpy as np
import pytest

from anatomy_forge.bank import AugmentParams
from anatomy_forge.errors import DataFormatError
from anatomy_forge.pipeline import (config_from_snapshot, config_snapshot,
                                    generate_pair, load_manifest, manifest_json,
                                    manifest_to_scene, pair_filenames,
                                    read_dataset_index, rle_decode, rle_encode,
                                    scene_rng, scene_to_manifest, write_dataset_index,
                                    write_pair)
from anatomy_forge.placement import SynthesisConfig, synthesize_scene
from anatomy_forge.relations import Weights
from anatomy_forge.render import RenderParams, render_labels
from oracles import flatten_f, rle_runs


def test_rle_matches_oracle_and_inverts():
    rng = np.random.default_rng(21)
    for _ in range(30):
        dims = tuple(rng.integers(1, 9, 3))
        mask = rng.random(dims) < rng.uniform(0.1, 0.9)
        runs = rle_encode(mask)
        assert runs == rle_runs(flatten_f(mask))
        assert np.array_equal(rle_decode(runs, dims), mask)


def test_rle_edge_cases():
    empty = np.zeros((2, 3, 2), dtype=bool)
    assert rle_encode(empty) == [12]
    full = np.ones((2, 3, 2), dtype=bool)
    assert rle_encode(full) == [0, 12]
    single = np.zeros((2, 2, 2), dtype=bool)
    single[0, 0, 0] = True
    assert rle_encode(single) == [0, 1, 7]


def test_rle_decode_rejects_bad_runs():
    with pytest.raises(DataFormatError):
        rle_decode([3], (2, 2, 2))            # undercovers
    with pytest.raises(DataFormatError):
        rle_decode([9], (2, 2, 2))            # overflows
    with pytest.raises(DataFormatError):
        rle_decode([-1, 9], (2, 2, 2))


def test_config_snapshot_round_trip():
    config = SynthesisConfig(dims=(32, 48, 64), n_candidates=11, perturb_sigma=0.2,
                             retries=2, instances_per_class={3: 2, 5: 0},
                             augment=AugmentParams(flip_prob=0.25,
                                                   rotation_enabled=False,
                                                   scale_range=(0.9, 1.1)),
                             weights=Weights(2.0, 1.0, 0.5, 0.25),
                             tau_in=0.4, nu_contact=10.0, tau_hard=0.2, seed=5)
    render = RenderParams(shell_thickness=2, intensity_range=(0.4, 0.9),
                          background=0.1, noise_sigma=0.0,
                          per_instance_intensity=False)
    snap = json.loads(json.dumps(config_snapshot(config, render)))
    config2, render2 = config_from_snapshot(snap)
    assert config2 == config
    assert render2 == render


def test_manifest_round_trip(demo_bank, demo_anchors, demo_graph):
    config = SynthesisConfig(dims=(48, 48, 48), seed=3)
    render = RenderParams()
    scene = synthesize_scene(demo_bank, demo_anchors, demo_graph, config,
                             scene_rng(3, 0))
    manifest = scene_to_manifest(scene, 3, 0, config, render)
    rebuilt = manifest_to_scene(json.loads(manifest_json(manifest)))
    assert rebuilt.dims == scene.dims
    assert rebuilt.union_count == scene.union_count
    assert rebuilt.class_counts == scene.class_counts
    assert np.array_equal(rebuilt.union, scene.union)
    assert len(rebuilt.placements) == len(scene.placements)
    for a, b in zip(scene.placements, rebuilt.placements):
        assert a.offset == b.offset and a.class_id == b.class_id
        assert a.score.total == b.score.total
        assert np.array_equal(a.mask, b.mask)
    assert np.array_equal(render_labels(rebuilt).data, render_labels(scene).data)


def test_manifest_rejects_tampering(demo_bank, demo_anchors, demo_graph):
    config = SynthesisConfig(dims=(48, 48, 48), seed=3)
    scene = synthesize_scene(demo_bank, demo_anchors, demo_graph, config,
                             scene_rng(3, 0))
    manifest = scene_to_manifest(scene, 3, 0, config, RenderParams())
    bad_schema = json.loads(manifest_json(manifest))
    bad_schema["schema"] = "anatomy-forge/scene-v0"
    with pytest.raises(DataFormatError, match="schema"):
        manifest_to_scene(bad_schema)
    bad_count = json.loads(manifest_json(manifest))
    bad_count["placements"][0]["voxels"] += 1
    with pytest.raises(DataFormatError, match="voxel count"):
        manifest_to_scene(bad_count)


def test_generate_pair_bitwise_deterministic(demo_bank, demo_anchors, demo_graph):
    config = SynthesisConfig(dims=(48, 48, 48), seed=42)
    render = RenderParams()
    a = generate_pair(demo_bank, demo_anchors, demo_graph, config, render, 42, 3)
    b = generate_pair(demo_bank, demo_anchors, demo_graph, config, render, 42, 3)
    assert a[0].data.tobytes() == b[0].data.tobytes()
    assert a[1].data.tobytes() == b[1].data.tobytes()
    assert manifest_json(a[2]) == manifest_json(b[2])


def test_generate_pair_varies_with_seed_and_index(demo_bank, demo_anchors, demo_graph):
    config = SynthesisConfig(dims=(48, 48, 48), seed=1)
    render = RenderParams()
    base = generate_pair(demo_bank, demo_anchors, demo_graph, config, render, 1, 0)
    other_index = generate_pair(demo_bank, demo_anchors, demo_graph, config, render, 1, 1)
    other_seed = generate_pair(demo_bank, demo_anchors, demo_graph, config, render, 2, 0)
    assert base[0].data.tobytes() != other_index[0].data.tobytes()
    assert base[0].data.tobytes() != other_seed[0].data.tobytes()
    with pytest.raises(ValueError):
        generate_pair(demo_bank, demo_anchors, demo_graph, config, render, 1, -1)


def test_manifest_records_config_and_scores(demo_bank, demo_anchors, demo_graph):
    config = SynthesisConfig(dims=(48, 48, 48), seed=7, tau_in=0.5)
    render = RenderParams(shell_thickness=2)
    _, _, manifest = generate_pair(demo_bank, demo_anchors, demo_graph, config,
                                   render, 7, 0)
    assert manifest["schema"] == "anatomy-forge/scene-v1"
    assert manifest["seed"] == 7 and manifest["index"] == 0
    assert manifest["config"]["tau_in"] == 0.5
    assert manifest["config"]["render"]["shell_thickness"] == 2
    for rec in manifest["placements"]:
        total = rec["score"]["total"]
        assert total == pytest.approx(rec["score"]["spatial"] + rec["score"]["phys"]
                                      + rec["score"]["topo"])
        assert len(rec["anchor"]) == 3 and len(rec["centroid"]) == 3


def test_write_pair_and_dataset_index(tmp_path, demo_bank, demo_anchors, demo_graph):
    config = SynthesisConfig(dims=(32, 32, 32), seed=0)
    render = RenderParams()
    for i in (0, 1):
        img, lab, man = generate_pair(demo_bank, demo_anchors, demo_graph, config,
                                      render, 0, i)
        write_pair(tmp_path, i, img, lab, man)
    write_dataset_index(tmp_path, 0, [1, 0], (32, 32, 32))

    assert pair_filenames(1) == ("img_000001.nii", "lab_000001.nii", "scene_000001.json")
    from anatomy_forge.nifti import read_nifti
    img_back = read_nifti(tmp_path / "img_000000.nii")
    lab_back = read_nifti(tmp_path / "lab_000000.nii")
    assert img_back.data.dtype == np.float32
    assert lab_back.data.dtype == np.uint8
    man_back = load_manifest(tmp_path / "scene_000000.json")
    assert man_back["index"] == 0

    doc = read_dataset_index(tmp_path)
    assert doc["count"] == 2
    assert [p["index"] for p in doc["pairs"]] == [0, 1]   # sorted
    assert doc["pairs"][0]["image"] == "img_000000.nii"

    (tmp_path / "dataset.json").write_text("{not json")
    with pytest.raises(DataFormatError, match="invalid JSON"):
        read_dataset_index(tmp_path)


def test_scene_rng_streams_are_independent():
    a = scene_rng(9, 0).random(4)
    b = scene_rng(9, 1).random(4)
    c = scene_rng(9, 0).random(4)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, c)
