"""Flat run configuration files, checksums, and run manifests.

A run is configured by one flat TOML-style key=value file; command-line
flags override file values. Every run writes a run_manifest.json holding
the resolved config hash, the seeds in play, and SHA-256 checksums of the
inputs. Timestamps live only in the manifest so the data artifacts stay
byte-stable across reruns.
"""

from __future__ import annotations

import hashlib
import json
import time
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .losses import LossConfig
from .network import RPBackboneConfig
from .synth import SceneSpec
from .training import MosaicPolicy, TrainConfig

DEFAULTS = {
    # scene
    "scene_width": 1000,
    "scene_height": 1000,
    "scene_classes": 5,
    "scene_sigma": 0.1,
    "scene_delta": 0.2,
    "scene_seed": 0,
    "scene_roads": 2,
    "scene_road_width": 8,
    "scene_smoothness": 25.0,
    # fusion
    "road_width_px": 1,
    "roads_fill_only": False,
    # network
    "net_blocks": 5,
    "net_kernels": [1, 3, 5],
    "net_channels": [64, 32, 16],
    "net_input_channels": 3,
    "net_classes": 0,  # 0: infer from the scene / scheme
    # training
    "train_patch_size": 250,
    "train_batch_size": 4,
    "train_epochs": 10,
    "train_learning_rate": 0.02,
    "train_momentum": 0.9,
    "train_seed": 0,
    "train_warmup_steps": 50,
    # loss
    "loss_tau": 0.7,
    "loss_gamma": 0.05,
    "loss_variance_form": "squared-2-norm",
    "loss_va_assignment": "predicted",
    # mosaic
    "mosaic_tile": 512,
    "mosaic_overlap": -1,  # -1: 2 x receptive field
    "mosaic_blend": "crop-center",
    # assessment
    "assess_points": 2000,
    "assess_seed": 7,
    "assess_strategy": "uniform",
}


def load_config(path=None, overrides=None):
    """Resolve defaults <- file <- explicit overrides into one flat dict."""
    cfg = dict(DEFAULTS)
    if path:
        with open(path, "rb") as f:
            loaded = tomllib.load(f)
        for k, v in loaded.items():
            if k not in cfg:
                raise ConfigError(f"{path}: unknown config key {k!r}")
            cfg[k] = v
    for k, v in (overrides or {}).items():
        if v is not None:
            if k not in cfg:
                raise ConfigError(f"unknown config key {k!r}")
            cfg[k] = v
    return cfg


def scene_spec(cfg):
    return SceneSpec(
        width=cfg["scene_width"], height=cfg["scene_height"],
        num_classes=cfg["scene_classes"], sigma=cfg["scene_sigma"],
        delta=cfg["scene_delta"], seed=cfg["scene_seed"],
        num_roads=cfg["scene_roads"], road_width_px=cfg["scene_road_width"],
        smoothness=cfg["scene_smoothness"])


def loss_config(cfg):
    return LossConfig(tau=cfg["loss_tau"], gamma=cfg["loss_gamma"],
                      variance_form=cfg["loss_variance_form"],
                      va_assignment=cfg["loss_va_assignment"])


def train_config(cfg):
    return TrainConfig(
        patch_size=cfg["train_patch_size"], batch_size=cfg["train_batch_size"],
        epochs=cfg["train_epochs"], learning_rate=cfg["train_learning_rate"],
        momentum=cfg["train_momentum"], seed=cfg["train_seed"],
        warmup_steps=cfg["train_warmup_steps"], loss=loss_config(cfg))


def net_config(cfg, num_classes=None, input_channels=None):
    L = num_classes or cfg["net_classes"]
    if not L:
        raise ConfigError("net_classes is unset and cannot be inferred")
    return RPBackboneConfig(
        num_classes=int(L), blocks=cfg["net_blocks"],
        branch_kernels=tuple(cfg["net_kernels"]),
        branch_channels=tuple(cfg["net_channels"]),
        input_channels=int(input_channels or cfg["net_input_channels"]))


def mosaic_policy(cfg):
    ov = cfg["mosaic_overlap"]
    return MosaicPolicy(tile=cfg["mosaic_tile"],
                        overlap=None if ov < 0 else int(ov),
                        blend=cfg["mosaic_blend"])


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def write_manifest(path, command, cfg, inputs, extra=None):
    manifest = {
        "command": command,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seeds": {k: v for k, v in cfg.items() if k.endswith("_seed")},
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    if extra:
        manifest.update(extra)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return manifest
