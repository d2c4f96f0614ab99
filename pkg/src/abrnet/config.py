"""Experiment configuration: one YAML/JSON file, validated against a JSON schema."""
from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import yaml

from .baselines import METHOD_NAMES, MethodSpec
from .datagen import EnvironmentSpec, ImageTaskSpec
from .exceptions import ConfigError
from .models import ModelConfig
from .trainer import TrainConfig

ENV_SEED = "ABRNET_SEED"
ENV_OUTPUT_DIR = "ABRNET_OUTPUT_DIR"

_pos_int = {"type": "integer", "minimum": 1}
_pos_num = {"type": "number", "exclusiveMinimum": 0}
_nonneg_num = {"type": "number", "minimum": 0}
_pair = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}

EXPERIMENT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "abrnet experiment",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "output_dir": {"type": "string"},
        "seeds": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
        "eval_head": {"enum": ["hat", "tilde", "mean"]},
        "jobs": _pos_int,
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "input_kind": {"enum": ["sequence", "image"]},
                "window_length": _pos_int,
                "signal_dim": _pos_int,
                "feature_dim": _pos_int,
                "condition_dim": _pos_int,
                "floor_extents": {"type": "array", "items": _pos_num, "minItems": 1},
                "discriminator_hidden": _pos_int,
                "image_shape": {"type": "array", "items": _pos_int, "minItems": 3, "maxItems": 3},
                "conv_channels": {"type": "array", "items": _pos_int, "minItems": 3, "maxItems": 3},
                "conditional_discriminator": {"type": "boolean"},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lam": {"type": "number", "exclusiveMinimum": 0.5, "maximum": 1},
                "lr_main": _nonneg_num,
                "lr_discriminator": _nonneg_num,
                "batch_size": _pos_int,
                "iterations": {"type": "integer", "minimum": 0},
                "seed": {"type": "integer"},
                "eval_every": _pos_int,
                "w_s": _nonneg_num,
                "w_adv": _nonneg_num,
                "optimizer": {"enum": ["adam", "sgd"]},
                "momentum": _nonneg_num,
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "task": {"enum": ["rf", "image"]},
                "seed": {"type": "integer"},
                "spec": {"type": "object"},
            },
        },
        "method": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": list(METHOD_NAMES)},
                "w_s": {"type": ["number", "null"], "minimum": 0},
                "w_adv": {"type": ["number", "null"], "minimum": 0},
            },
        },
        "compare": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"methods": {"type": "array", "items": {"enum": list(METHOD_NAMES)}, "minItems": 1}},
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "values": {"type": "array", "minItems": 1,
                           "items": {"type": "number", "exclusiveMinimum": 0.5, "maximum": 1}},
            },
        },
    },
}

_ENV_FIELDS = set(EnvironmentSpec.__dataclass_fields__)
_IMAGE_FIELDS = set(ImageTaskSpec.__dataclass_fields__)


@dataclass
class ExperimentConfig:
    model: ModelConfig
    train: TrainConfig
    data_task: str = "rf"
    data_seed: int = 0
    data_spec: object = None
    method: MethodSpec = field(default_factory=MethodSpec)
    output_dir: str = "runs"
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    eval_head: str = "mean"
    compare_methods: list = field(default_factory=lambda: ["source_only", "dann_lite", "mcd_lite", "abrnet"])
    sweep_values: list = field(default_factory=lambda: [0.55, 0.6, 0.7, 0.8, 0.9, 1.0])
    jobs: int = 1
    raw: dict = field(default_factory=dict)

    def to_dict(self):
        return copy.deepcopy(self.raw)


def _schema_error_message(err):
    where = "/".join(str(p) for p in err.absolute_path) or "<root>"
    return f"config field '{where}': {err.message}"


def parse_config(raw: dict, seed=None, output_dir=None, environ=None) -> ExperimentConfig:
    """Validate ``raw`` and build the typed config.

    Precedence for seed/output dir: explicit argument > environment variable > file.
    """
    environ = os.environ if environ is None else environ
    raw = copy.deepcopy(raw or {})
    try:
        jsonschema.validate(raw, EXPERIMENT_SCHEMA)
    except jsonschema.ValidationError as err:
        raise ConfigError(_schema_error_message(err)) from None

    if seed is None and environ.get(ENV_SEED):
        try:
            seed = int(environ[ENV_SEED])
        except ValueError:
            raise ConfigError(f"{ENV_SEED} must be an integer, got {environ[ENV_SEED]!r}") from None
    if output_dir is None and environ.get(ENV_OUTPUT_DIR):
        output_dir = environ[ENV_OUTPUT_DIR]
    if seed is not None:
        raw.setdefault("train", {})["seed"] = int(seed)
        raw["seeds"] = [int(seed)]
    if output_dir is not None:
        raw["output_dir"] = str(output_dir)

    data = raw.get("data", {})
    task = data.get("task", "rf")
    spec_raw = data.get("spec", {})
    allowed = _ENV_FIELDS if task == "rf" else _IMAGE_FIELDS
    unknown = set(spec_raw) - allowed
    if unknown:
        raise ConfigError(f"config field 'data/spec/{sorted(unknown)[0]}': unknown for task {task!r}")
    try:
        data_spec = EnvironmentSpec(**spec_raw) if task == "rf" else ImageTaskSpec(**spec_raw)
        model_raw = dict(raw.get("model", {}))
        if task == "image":
            model_raw.setdefault("input_kind", "image")
            model_raw.setdefault("floor_extents", [1.0, 1.0, 1.0])
            model_raw.setdefault("image_shape", [data_spec.size, data_spec.size, 3])
        else:
            model_raw.setdefault("floor_extents", list(data_spec.extents))
            model_raw.setdefault("window_length", data_spec.window_length)
        model = ModelConfig(**model_raw)
        train = TrainConfig(**raw.get("train", {}))
        method = MethodSpec(**raw.get("method", {"name": "abrnet"}))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None

    return ExperimentConfig(
        model=model,
        train=train,
        data_task=task,
        data_seed=int(data.get("seed", 0)),
        data_spec=data_spec,
        method=method,
        output_dir=raw.get("output_dir", "runs"),
        seeds=list(raw.get("seeds", [train.seed])),
        eval_head=raw.get("eval_head", "mean"),
        compare_methods=list(raw.get("compare", {}).get("methods",
                                                         ["source_only", "dann_lite", "mcd_lite", "abrnet"])),
        sweep_values=list(raw.get("sweep", {}).get("values", [0.55, 0.6, 0.7, 0.8, 0.9, 1.0])),
        jobs=int(raw.get("jobs", 1)),
        raw=raw,
    )


def load_config(path, seed=None, output_dir=None, environ=None) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML/JSON ({exc})") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return parse_config(raw, seed=seed, output_dir=output_dir, environ=environ)
