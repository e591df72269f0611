"""Generator and dataset handles for training pipelines.

open_generator/next_pair give random access to freshly synthesized
(image, label, manifest) triples; scene ``index`` is a pure function of the
handle's configuration plus the seed, so the same index always produces the
same arrays and workers can shard indices without coordination.

Two modes:
  * "in-process" calls the installed anatomy_forge package directly
    (fastest, full validation at open time);
  * "subprocess" shells out to the generator CLI per index and decodes the
    files it writes, for environments where the package itself cannot be
    imported. Outputs are identical between the modes.
"""

import json
import shutil
import subprocess
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .volume_files import read_volume

DATASET_SCHEMA = "anatomy-forge/dataset-v1"
BANK_MAGIC = b"AFBANK01"

_INT_KEYS = ("n_candidates", "retries", "shell_thickness")
_FLOAT_KEYS = ("perturb_sigma", "lambda_anc", "lambda_ovl", "lambda_in",
               "lambda_adj", "tau_in", "nu_contact", "tau_hard", "flip_prob",
               "background", "noise_sigma")
_TUPLE_KEYS = {"dims": 3, "scale_range": 2, "intensity_range": 2}
_BOOL_KEYS = ("rotation_enabled", "per_instance_intensity")
_KNOWN_KEYS = frozenset(_INT_KEYS) | frozenset(_FLOAT_KEYS) \
    | frozenset(_TUPLE_KEYS) | frozenset(_BOOL_KEYS) | {"seed"}

# config key -> synthesize flag, for the subprocess lane
_VALUE_FLAGS = {
    "dims": "--dims",
    "n_candidates": "--n-candidates",
    "perturb_sigma": "--perturb-sigma",
    "retries": "--retries",
    "lambda_anc": "--lambda-anc",
    "lambda_ovl": "--lambda-ovl",
    "lambda_in": "--lambda-in",
    "lambda_adj": "--lambda-adj",
    "tau_in": "--tau-in",
    "nu_contact": "--nu-contact",
    "tau_hard": "--tau-hard",
    "flip_prob": "--flip-prob",
    "scale_range": "--scale-range",
    "shell_thickness": "--shell-thickness",
    "intensity_range": "--intensity-range",
    "background": "--background",
    "noise_sigma": "--noise-sigma",
}


class BindingsError(Exception):
    """The generator could not be opened or driven."""


def _normalize_config(config) -> dict:
    cfg = dict(config or {})
    unknown = sorted(set(cfg) - _KNOWN_KEYS)
    if unknown:
        raise ValueError(f"unknown config keys: {unknown}; "
                         f"known: {sorted(_KNOWN_KEYS)}")
    for key in _INT_KEYS:
        if key in cfg:
            cfg[key] = int(cfg[key])
    for key in _FLOAT_KEYS:
        if key in cfg:
            cfg[key] = float(cfg[key])
    for key, width in _TUPLE_KEYS.items():
        if key in cfg:
            values = tuple(cfg[key])
            if len(values) != width:
                raise ValueError(f"{key} takes {width} values, got {values!r}")
            cfg[key] = tuple(int(v) for v in values) if key == "dims" \
                else tuple(float(v) for v in values)
    for key in _BOOL_KEYS:
        if key in cfg:
            cfg[key] = bool(cfg[key])
    cfg["seed"] = int(cfg.get("seed", 0))
    if cfg["seed"] < 0:
        raise ValueError("seed must be non-negative")
    return cfg


def _primary():
    try:
        import anatomy_forge
    except ImportError as exc:
        raise BindingsError(
            "the anatomy_forge package is not importable in this process; "
            "open the generator with mode='subprocess'") from exc
    return anatomy_forge


def _build_objects(af, graph, cfg):
    """Construct the generator's config objects from the normalized dict.

    Only user-supplied keys are passed through, so defaults always come from
    the generator itself and stay in lockstep with the CLI's defaults.
    """
    syn = {k: cfg[k] for k in ("dims", "n_candidates", "perturb_sigma",
                               "retries", "tau_in", "nu_contact", "tau_hard")
           if k in cfg}
    aug = {k: cfg[k] for k in ("flip_prob", "rotation_enabled", "scale_range")
           if k in cfg}
    if aug:
        syn["augment"] = af.AugmentParams(**aug)
    lam = [cfg.get(k) for k in ("lambda_anc", "lambda_ovl",
                                "lambda_in", "lambda_adj")]
    if any(v is not None for v in lam):
        base = graph.weights
        syn["weights"] = af.Weights(
            anchor=lam[0] if lam[0] is not None else base.anchor,
            overlap=lam[1] if lam[1] is not None else base.overlap,
            containment=lam[2] if lam[2] is not None else base.containment,
            adjacency=lam[3] if lam[3] is not None else base.adjacency,
        )
    ren = {k: cfg[k] for k in ("shell_thickness", "intensity_range",
                               "background", "noise_sigma",
                               "per_instance_intensity") if k in cfg}
    return (af.SynthesisConfig(seed=cfg["seed"], **syn),
            af.RenderParams(**ren))


def _default_command() -> list[str]:
    exe = shutil.which("anatomy-forge")
    if exe:
        return [exe]
    return [sys.executable, "-m", "anatomy_forge.cli"]


@dataclass(eq=False)
class GeneratorHandle:
    """Read-only handle; safe to share across threads and worker processes."""

    bank_path: str
    anchors_path: str
    graph_path: str
    mode: str                       # "in-process" or "subprocess"
    cfg: dict
    command: list[str] = field(default_factory=_default_command)
    _loaded: tuple | None = None    # (bank, anchors, graph, config, render)

    @property
    def seed(self) -> int:
        return self.cfg["seed"]


def open_generator(bank_path, anchors_path, graph_path, config=None,
                   mode: str = "auto", command=None) -> GeneratorHandle:
    """Validate the inputs and return a handle for next_pair.

    config is a dict of generation overrides (dims, seed, n_candidates,
    perturb_sigma, retries, lambda_*/tau_*/nu_contact, flip_prob,
    rotation_enabled, scale_range, shell_thickness, intensity_range,
    background, noise_sigma, per_instance_intensity); anything omitted uses
    the generator's defaults. mode "auto" prefers in-process and falls back
    to the CLI subprocess when the package is not importable.
    """
    cfg = _normalize_config(config)
    bank_path, anchors_path, graph_path = (str(bank_path), str(anchors_path),
                                           str(graph_path))
    if mode not in ("auto", "in-process", "subprocess"):
        raise ValueError(f"unknown mode {mode!r}; "
                         f"use 'auto', 'in-process' or 'subprocess'")
    if mode == "auto":
        try:
            _primary()
            mode = "in-process"
        except BindingsError:
            mode = "subprocess"

    loaded = None
    if mode == "in-process":
        af = _primary()
        bank = af.load_bank(bank_path)
        anchors = af.load_anchors(anchors_path)
        try:
            text = Path(graph_path).read_text()
        except OSError as exc:
            raise BindingsError(f"{graph_path}: cannot read graph: {exc}") from exc
        graph = af.load_graph(text, bank.n_classes)
        config_obj, render = _build_objects(af, graph, cfg)
        loaded = (bank, anchors, graph, config_obj, render)
    else:
        # no package to lean on here: check reachability and the bank
        # signature now, leave deep validation to the CLI on first use
        for p in (bank_path, anchors_path, graph_path):
            with open(p, "rb"):
                pass
        with open(bank_path, "rb") as fh:
            if fh.read(len(BANK_MAGIC)) != BANK_MAGIC:
                raise BindingsError(f"{bank_path}: not a shape-bank file (bad magic)")

    return GeneratorHandle(bank_path, anchors_path, graph_path, mode, cfg,
                           command=list(command) if command else _default_command(),
                           _loaded=loaded)


def _config_flags(cfg: dict) -> list[str]:
    argv = []
    for key, flag in _VALUE_FLAGS.items():
        if key not in cfg:
            continue
        value = cfg[key]
        if isinstance(value, tuple):
            argv += [flag, ",".join(repr(v) if isinstance(v, float) else str(v)
                                    for v in value)]
        elif isinstance(value, float):
            argv += [flag, repr(value)]
        else:
            argv += [flag, str(value)]
    if cfg.get("rotation_enabled") is False:
        argv.append("--no-rotation")
    if cfg.get("per_instance_intensity") is False:
        argv.append("--uniform-intensity")
    return argv


def _subprocess_pair(handle: GeneratorHandle, index: int):
    with tempfile.TemporaryDirectory(prefix="anatomy_forge_pair_") as tmp:
        argv = list(handle.command) + [
            "synthesize",
            "--bank", handle.bank_path,
            "--anchors", handle.anchors_path,
            "--graph", handle.graph_path,
            "--out-dir", tmp,
            "--count", "1", "--start", str(index),
            "--seed", str(handle.seed), "--jobs", "1",
        ] + _config_flags(handle.cfg)
        proc = subprocess.run(argv, capture_output=True, text=True)
        if proc.returncode != 0:
            detail = proc.stderr.strip() or proc.stdout.strip() \
                or f"exit code {proc.returncode}"
            raise BindingsError(f"generator subprocess failed: {detail}")
        root = Path(tmp)
        image = read_volume(root / f"img_{index:06d}.nii")
        labels = read_volume(root / f"lab_{index:06d}.nii")
        manifest = json.loads((root / f"scene_{index:06d}.json").read_text())
    return image, labels, manifest


def next_pair(handle: GeneratorHandle, index: int):
    """(image, labels, manifest) for scene ``index``.

    image is float32 (nx, ny, nz) in [0, 1]; labels is uint8 with the same
    dims and x varying fastest in flat order; manifest is the scene's JSON
    record. Pure function of (handle, index): repeated calls are identical
    and indices can be drawn in any order from any worker.
    """
    index = int(index)
    if index < 0:
        raise ValueError(f"scene index must be non-negative, got {index}")
    if handle.mode == "in-process":
        af = _primary()
        bank, anchors, graph, config, render = handle._loaded
        image, labels, manifest = af.generate_pair(bank, anchors, graph,
                                                   config, render,
                                                   handle.seed, index)
        return image.data, labels.data, manifest
    return _subprocess_pair(handle, index)


class Dataset:
    """Indexed view of an already-written dataset directory.

    len() is the pair count; ds[i] decodes and returns (image, labels,
    manifest) for the i-th pair in index order (negative positions count
    from the end, like a list). Iterating yields every pair once.
    """

    def __init__(self, root: Path, doc: dict):
        self._root = root
        self._doc = doc
        self._pairs = doc["pairs"]

    def __len__(self) -> int:
        return len(self._pairs)

    def __getitem__(self, position: int):
        record = self._pairs[position]
        image = read_volume(self._root / record["image"])
        labels = read_volume(self._root / record["label"])
        manifest = json.loads((self._root / record["scene"]).read_text())
        return image, labels, manifest

    @property
    def indices(self) -> list[int]:
        return [record["index"] for record in self._pairs]

    @property
    def seed(self) -> int:
        return self._doc["seed"]

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self._doc["dims"])


def read_dataset(dataset_dir) -> Dataset:
    """Open a directory written by the generator's synthesize command."""
    root = Path(dataset_dir)
    path = root / "dataset.json"
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise BindingsError(f"{path}: cannot read dataset index: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise BindingsError(f"{path}: invalid JSON: {exc}") from exc
    if doc.get("schema") != DATASET_SCHEMA:
        raise BindingsError(f"unknown dataset schema {doc.get('schema')!r}")
    return Dataset(root, doc)
