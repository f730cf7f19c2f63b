"""Hierarchical run configuration: defaults for every field, strict unknown
key rejection, dotted-path overrides, and a verbatim echo of the resolved
document into the run's output directory."""

from __future__ import annotations

import copy
from pathlib import Path

import yaml

from .classifier import ClassifierConfig, TrainConfig
from .dsp import StftConfig
from .interpreter import InterpreterConfig
from .training import LossWeights, OptimizerConfig


class ConfigError(ValueError):
    """Invalid configuration document, key, or value."""


DEFAULT_CONFIG: dict = {
    "seed": 0,
    "output_dir": "runs/default",
    "dataset": {
        "num_classes": 5,
        "per_class": 20,
        "clip_seconds": 1.0,
        "sample_rate": 16000,
    },
    "classifier": {
        "mel_bands": 64,
        "mel_window": 512,
        "mel_hop": 160,
        "mel_fft": 512,
        "fmin_hz": 0.0,
        "fmax_hz": None,
        "widths": [16, 32, 64, 128],
        "lr": 1.0e-3,
        "batch_size": 16,
        "max_epochs": 30,
        "patience": 10,
        "augment": True,
        "augment_snr_db": [5.0, 20.0],
        "augment_prob": 0.5,
    },
    "interpreter": {
        "alpha": 0.75,
        "latent_channels": 128,
        "kernel": 16,
        "masknet_width": 64,
        "masknet_blocks": 2,
        "chunk": 50,
        "num_heads": 4,
        "unet_width": 32,
    },
    "loss": {
        "lambda_in": 5.0,
        "lambda_out": 0.2,
        "lambda_reg": 6.0,
    },
    "optimizer": {
        "lr": 5.0e-4,
        "batch_size": 8,
        "max_epochs": 50,
        "clip_norm": 5.0,
    },
    "spectral": {
        "window_length": 512,
        "hop": 128,
        "fft_size": 512,
        "window": "hann",
    },
    "eval": {
        "split": "test",
        "explainer": "masked-synthesis",
    },
    "study": {
        "num_stimuli": 9,
        "host": "127.0.0.1",
        "port": 8765,
        "static_dir": None,
    },
}


def _merge(base: dict, incoming: dict, prefix: str = "") -> None:
    for key, value in incoming.items():
        dotted = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key: {dotted}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"expected a mapping at {dotted}")
            _merge(base[key], value, prefix=dotted + ".")
        else:
            base[key] = value


def _apply_override(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"override must look like key=value, got {assignment!r}")
    dotted, raw = assignment.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"unparseable override value for {dotted}: {raw!r}") from exc
    node: dict = {}
    leaf = node
    parts = dotted.strip().split(".")
    for part in parts[:-1]:
        leaf[part] = {}
        leaf = leaf[part]
    leaf[parts[-1]] = value
    _merge(cfg, node)


def load_config(path=None, overrides: list[str] | None = None) -> dict:
    """Resolve defaults, then the optional YAML file, then dotted overrides;
    any key absent from the defaults is rejected."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        if doc is None:
            doc = {}
        if not isinstance(doc, dict):
            raise ConfigError(f"config root must be a mapping: {path}")
        _merge(cfg, doc)
    for assignment in overrides or []:
        _apply_override(cfg, assignment)
    return cfg


def echo_config(cfg: dict, output_dir) -> Path:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "resolved_config.yaml"
    path.write_text(yaml.safe_dump(cfg, sort_keys=False), encoding="utf-8")
    return path


def _build(factory, section: dict, **extra):
    try:
        return factory(**section, **extra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {factory.__name__} settings: {exc}") from exc


def classifier_config(cfg: dict, num_classes: int) -> ClassifierConfig:
    c = cfg["classifier"]
    return _build(
        ClassifierConfig,
        {
            "num_classes": num_classes,
            "sample_rate": cfg["dataset"]["sample_rate"],
            "mel_bands": c["mel_bands"],
            "mel_window": c["mel_window"],
            "mel_hop": c["mel_hop"],
            "mel_fft": c["mel_fft"],
            "fmin_hz": c["fmin_hz"],
            "fmax_hz": c["fmax_hz"],
            "widths": tuple(c["widths"]),
        },
    )


def classifier_train_config(cfg: dict) -> TrainConfig:
    c = cfg["classifier"]
    return _build(
        TrainConfig,
        {
            "lr": c["lr"],
            "batch_size": c["batch_size"],
            "max_epochs": c["max_epochs"],
            "patience": c["patience"],
            "augment": c["augment"],
            "augment_snr_db": tuple(c["augment_snr_db"]),
            "augment_prob": c["augment_prob"],
        },
    )


def interpreter_config(cfg: dict) -> InterpreterConfig:
    return _build(InterpreterConfig, dict(cfg["interpreter"]))


def loss_weights(cfg: dict) -> LossWeights:
    return _build(LossWeights, dict(cfg["loss"]))


def optimizer_config(cfg: dict) -> OptimizerConfig:
    return _build(OptimizerConfig, dict(cfg["optimizer"]))


def spectral_config(cfg: dict) -> StftConfig:
    return _build(StftConfig, dict(cfg["spectral"]))
