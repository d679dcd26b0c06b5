"""Run configuration: JSON schema, loading with precise errors, overrides."""
from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path

import jsonschema

from .datagen import DatasetConfig, Task
from .pipeline import TrainingConfig


class ConfigError(ValueError):
    pass


_num = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}
_shape = {"type": "array", "items": _pos_int, "minItems": 3, "maxItems": 3}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["training"],
    "properties": {
        "task": {"enum": ["classification", "regression"]},
        "output_dir": {"type": "string"},
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "num_classes": {"type": "integer", "minimum": 2},
                "samples_per_class_source": _pos_int,
                "samples_per_class_target_labeled": _pos_int,
                "samples_per_class_target_unlabeled": _pos_int,
                "source_shape": _shape,
                "target_shape": _shape,
                "noise_sigma_source": {"type": "number", "minimum": 0},
                "noise_sigma_target": {"type": "number", "minimum": 0},
                "latent_dim": _pos_int,
                "latent_jitter": {"type": "number", "minimum": 0},
                "class_separation": {"type": "number", "minimum": 0},
                "task": {"enum": ["classification", "regression"]},
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "roughness_schedule": {"type": "array", "items": _num, "minItems": 1},
            },
        },
        "dataset_dirs": {
            "type": "object",
            "additionalProperties": False,
            "required": ["source", "target_labeled", "target_unlabeled", "truth"],
            "properties": {k: {"type": "string"} for k in ("source", "target_labeled", "target_unlabeled", "truth")},
        },
        "training": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "loss": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"beta": {"type": "number", "minimum": 0},
                                   "epsilon": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1e-3}},
                },
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "batch_size": _pos_int,
                "max_epochs_per_stage": {"oneOf": [
                    {"type": "integer", "minimum": 0},
                    {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 3, "maxItems": 3},
                ]},
                "min_rel_improvement": {"type": "number", "minimum": 0},
                "patience": _pos_int,
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "bottleneck_size": _pos_int,
                "classifier_layers": _pos_int,
                "hidden_width": _pos_int,
                "holdout_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            },
        },
        "ablations": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "beta_override": {"type": ["number", "null"], "minimum": 0},
                "cws_grad": {"enum": ["both", "target-only"]},
                "skip_stage3": {"type": "boolean"},
            },
        },
    },
    "oneOf": [{"required": ["dataset"]}, {"required": ["dataset_dirs"]}],
}

BUNDLED = ("default", "regression")


def _read_text(path) -> tuple[str, str]:
    p = Path(path)
    if p.is_file():
        return p.read_text(), str(p)
    if str(path) in BUNDLED:
        name = f"{path}.json"
        return resources.files("saeda.configs").joinpath(name).read_text(), f"<bundled {name}>"
    raise ConfigError(f"config file not found: {path}")


def load_config(path) -> dict:
    """Parse and schema-check a run config; errors carry line/column or key path."""
    text, label = _read_text(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{label}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    validate(doc, label)
    return doc


def validate(doc: dict, label="config") -> None:
    errors = sorted(jsonschema.Draft7Validator(SCHEMA).iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{label}: at {where}: {e.message}")


def apply_overrides(doc: dict, seed=None, output=None, beta=None, task=None, cws_grad=None,
                    skip_stage3=None) -> dict:
    doc = copy.deepcopy(doc)
    abl = doc.setdefault("ablations", {})
    if seed is not None:
        doc["training"]["seed"] = seed
        if "dataset" in doc:
            doc["dataset"]["seed"] = seed
    if output is not None:
        doc["output_dir"] = str(output)
    if beta is not None:
        abl["beta_override"] = beta
    if task is not None:
        doc["task"] = task
    if cws_grad is not None:
        abl["cws_grad"] = cws_grad
    if skip_stage3:
        abl["skip_stage3"] = True
    validate(doc)
    return doc


def task_of(doc) -> Task:
    return Task(doc.get("task", doc.get("dataset", {}).get("task", "classification")))


def dataset_config(doc) -> DatasetConfig:
    d = dict(doc["dataset"])
    d["task"] = task_of(doc).value
    try:
        return DatasetConfig.from_dict(d)
    except ValueError as exc:
        raise ConfigError(f"dataset: {exc}") from None


def training_config(doc) -> TrainingConfig:
    t = copy.deepcopy(doc["training"])
    abl = doc.get("ablations", {})
    if abl.get("beta_override") is not None:
        t.setdefault("loss", {})["beta"] = abl["beta_override"]
    t["cws_grad"] = abl.get("cws_grad", "both")
    t["skip_stage3"] = bool(abl.get("skip_stage3", False))
    t["task"] = task_of(doc).value
    try:
        return TrainingConfig.from_dict(t)
    except ValueError as exc:
        raise ConfigError(f"training: {exc}") from None
