"""YAML scene and experiment descriptions.  Unknown keys are errors.

Scene document::

    preset: desk            # optional; remaining keys override the preset
    sample_rate: 16000
    speed_of_sound: 340
    duration: 10
    self_noise_snr: 40      # dB re target at the reference mic; null disables
    diffuse_noise_power: 0
    reference_mic: 0
    rng_seed: 0
    nodes:
      - {id: 1, mics: [[0, 0, 1], [0.02, 0, 1]]}
      - {id: 2, center: [1, 0, 1], n_mics: 3, spacing: 0.02, axis_deg: 0}
    sources:
      - {position: [0.3, -0.6, 1.3], role: target,
         signal: {kind: speechlike, seed: 1}, power: 1.0, active: [[0, 5]]}

Experiment document::

    id: demo
    scene: scene.yaml       # path (relative to this file) or inline mapping
    beamformer: BDLCMP
    mode: acyclic           # centralized | acyclic | cyclic | hybrid
    topology: ring          # chain | ring | star | complete | {kind: star, hub: 2}
                            # | {edges: [[1, 2], [2, 3]]}
    root: null              # tree root; default is the reference mic's node
    t_max: 1                # PDMM weight iterations per frame
    output_t_max: 10        # PDMM averaging iterations per frame
    rho: 0.5
    warm_start: true
    tad: {kind: energy, threshold_db: 1.5}
    ratf: {source: perturbed, radius: 0.2}   # ground_truth | estimated | perturbed
    seeds: [0, 1, 2, 3, 4]
    averaging: {mode: cumulative}   # or {mode: exponential, forgetting: 0.98}
    stft: {frame_len: 400, fft_len: 1024}
    outputs: {results_csv: results.csv, ledger_csv: ledger.csv,
              ledger_per_bin: false, audio: out.wav}
"""
from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np
import yaml

from .scene import NodeSpec, SceneConfig, SceneError, SourceSpec, desk_scene, uniform_linear_node


class ConfigError(ValueError):
    pass


SCENE_KEYS = {"preset", "sample_rate", "speed_of_sound", "duration", "self_noise_snr",
              "diffuse_noise_power", "reference_mic", "rng_seed", "nodes", "sources"}
NODE_KEYS = {"id", "mics", "center", "n_mics", "spacing", "axis_deg"}
SOURCE_KEYS = {"position", "role", "signal", "power", "active"}
SIGNAL_KEYS = {"kind", "seed", "path"}
EXPERIMENT_KEYS = {"id", "scene", "beamformer", "mode", "topology", "root", "t_max",
                   "output_t_max", "rho", "warm_start", "tad", "ratf", "seeds", "averaging",
                   "stft", "outputs"}
TAD_KEYS = {"kind", "threshold_db", "smoothing", "subframe_ms", "floor_percentile"}
RATF_KEYS = {"source", "radius"}
AVERAGING_KEYS = {"mode", "forgetting"}
STFT_KEYS = {"frame_len", "fft_len"}
OUTPUT_KEYS = {"results_csv", "ledger_csv", "ledger_per_bin", "audio"}


def _check(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(d).__name__}")
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")


def load_yaml(path) -> dict:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if doc is None:
        raise ConfigError(f"{path}: empty document")
    return doc


def _node(d, i) -> NodeSpec:
    _check(d, NODE_KEYS, f"nodes[{i}]")
    if "id" not in d:
        raise ConfigError(f"nodes[{i}]: missing id")
    if "mics" in d:
        if {"center", "n_mics", "spacing", "axis_deg"} & set(d):
            raise ConfigError(f"nodes[{i}]: give either mics or a line description")
        return NodeSpec(int(d["id"]), np.asarray(d["mics"], float))
    if "center" not in d:
        raise ConfigError(f"nodes[{i}]: need mics or center")
    return uniform_linear_node(int(d["id"]), d["center"], int(d.get("n_mics", 3)),
                               float(d.get("spacing", 0.02)), float(d.get("axis_deg", 0.0)))


def _source(d, i, base_dir) -> SourceSpec:
    _check(d, SOURCE_KEYS, f"sources[{i}]")
    sig = dict(d.get("signal", {"kind": "white"}))
    _check(sig, SIGNAL_KEYS, f"sources[{i}].signal")
    if sig.get("kind") == "file":
        if "path" not in sig:
            raise ConfigError(f"sources[{i}].signal: file kind needs a path")
        sig["path"] = str(Path(base_dir, sig["path"]))
    active = d.get("active")
    if active is not None:
        active = tuple((float(a), float(b)) for a, b in active)
    return SourceSpec(d["position"], d.get("role", "interferer"), sig, float(d.get("power", 1.0)),
                      active)


def scene_from_dict(d, base_dir=".", seed=None) -> SceneConfig:
    """Build a scene; ``seed`` overrides ``rng_seed`` (and the preset's seed)."""
    _check(d, SCENE_KEYS, "scene")
    d = dict(d)
    if seed is not None:
        d["rng_seed"] = int(seed)
    try:
        if "preset" in d:
            preset = d.pop("preset")
            if preset != "desk":
                raise ConfigError(f"unknown scene preset {preset!r}")
            kw = {}
            if "nodes" in d:
                kw["nodes"] = [_node(n, i) for i, n in enumerate(d.pop("nodes"))]
            if "sources" in d:
                kw["sources"] = [_source(s, i, base_dir) for i, s in enumerate(d.pop("sources"))]
            s = int(d.pop("rng_seed", 0))
            duration = float(d.pop("duration", 10.0))
            return desk_scene(seed=s, duration=duration, **kw, **d)
        for key in ("nodes", "sources"):
            if key not in d:
                raise ConfigError(f"scene: missing {key}")
        nodes = [_node(n, i) for i, n in enumerate(d.pop("nodes"))]
        sources = [_source(s, i, base_dir) for i, s in enumerate(d.pop("sources"))]
        return SceneConfig(nodes=nodes, sources=sources, **d)
    except SceneError as exc:
        raise ConfigError(f"scene: {exc}") from exc
    except TypeError as exc:
        raise ConfigError(f"scene: {exc}") from exc


def load_scene(path, seed=None) -> SceneConfig:
    path = Path(path)
    return scene_from_dict(load_yaml(path), path.parent, seed)


@dataclasses.dataclass
class ExperimentSpec:
    scene: dict
    beamformer: str
    id: str = "experiment"
    mode: str = "centralized"
    topology: object = "ring"
    root: int | None = None
    t_max: int = 1
    output_t_max: int = 10
    rho: float = 0.5
    warm_start: bool = True
    tad: dict = dataclasses.field(default_factory=lambda: {"kind": "ideal"})
    ratf: dict = dataclasses.field(default_factory=lambda: {"source": "ground_truth"})
    seeds: list = dataclasses.field(default_factory=lambda: [0])
    averaging: dict = dataclasses.field(default_factory=lambda: {"mode": "cumulative"})
    stft: dict = dataclasses.field(default_factory=lambda: {"frame_len": 400, "fft_len": 1024})
    outputs: dict = dataclasses.field(default_factory=dict)
    base_dir: str = "."

    def scene_config(self, seed=None) -> SceneConfig:
        return scene_from_dict(self.scene, self.base_dir, seed)

    def replace(self, **kw) -> "ExperimentSpec":
        return dataclasses.replace(self, **kw)


def experiment_from_dict(d, base_dir=".") -> ExperimentSpec:
    _check(d, EXPERIMENT_KEYS, "experiment")
    d = dict(d)
    for key in ("scene", "beamformer"):
        if key not in d:
            raise ConfigError(f"experiment: missing {key}")
    scene = d.pop("scene")
    if isinstance(scene, str):
        scene_path = Path(base_dir, scene)
        scene = load_yaml(scene_path)
        scene_dir = str(scene_path.parent)
    else:
        scene_dir = str(base_dir)
    _check(scene, SCENE_KEYS, "scene")
    for key, allowed in (("tad", TAD_KEYS), ("ratf", RATF_KEYS), ("averaging", AVERAGING_KEYS),
                         ("stft", STFT_KEYS), ("outputs", OUTPUT_KEYS)):
        if key in d:
            if isinstance(d[key], str) and key in ("tad", "ratf"):
                d[key] = {"kind" if key == "tad" else "source": d[key]}
            _check(d[key], allowed, key)
    if "seeds" in d:
        seeds = d["seeds"]
        d["seeds"] = [int(s) for s in (seeds if isinstance(seeds, list) else [seeds])]
    outputs = dict(d.pop("outputs", {}))
    for k in ("results_csv", "ledger_csv", "audio"):
        if k in outputs and outputs[k] is not None:
            outputs[k] = str(Path(base_dir, outputs[k]))
    spec = ExperimentSpec(scene=scene, outputs=outputs, base_dir=scene_dir, **d)
    spec.beamformer = str(spec.beamformer).upper()
    return spec


def load_experiment(path) -> ExperimentSpec:
    path = Path(path)
    return experiment_from_dict(load_yaml(path), path.parent)
