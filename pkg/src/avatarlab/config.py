"""Experiment configuration: YAML files with a versioned, strict schema.

Every run resolves its file against the defaults below, validates the result
(unknown keys rejected, errors name the offending key path), and writes the
resolved copy next to its outputs so the experiment is reproducible from that
copy alone. Ablation modes are pure scheduling switches: changing `mode` never
touches loss weights or any other block.
"""

from __future__ import annotations

import copy

import jsonschema
import yaml

from .curriculum import CameraRanges, CurriculumConfig
from .optimize import DEFAULT_LEARNING_RATES, LossWeights
from .oracle import CorruptionModel
from .pipeline import MODES, TrainLoopConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the key path."""


def _range_schema():
    return {
        "type": "array",
        "items": {"type": "number"},
        "minItems": 2,
        "maxItems": 2,
    }


def _camera_ranges_schema():
    return {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "distance": _range_schema(),
            "fovy": _range_schema(),
            "elevation": _range_schema(),
            "azimuth": _range_schema(),
        },
    }


SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "seed"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "seed": {"type": "integer", "minimum": 0},
        "mode": {"enum": list(MODES)},
        "output_dir": {"type": ["string", "null"]},
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "total_iters": {"type": "integer", "minimum": 1},
                "resolution": {"type": "integer", "minimum": 16},
                "gaussians_per_triangle": {"type": "integer", "minimum": 1},
                "update_interval": {"type": "integer", "minimum": 1},
                "eval_interval": {"type": "integer", "minimum": 0},
                "checkpoint_interval": {"type": "integer", "minimum": 0},
                "head_subdiv": {"type": "integer", "minimum": 0, "maximum": 4},
                "head_proportions": {
                    "type": "array",
                    "items": {"type": "number", "exclusiveMinimum": 0},
                    "minItems": 3,
                    "maxItems": 3,
                },
            },
        },
        "learning_rates": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                name: {"type": "number", "exclusiveMinimum": 0}
                for name in DEFAULT_LEARNING_RATES
            },
        },
        "loss_weights": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lambda_l1": {"type": "number", "minimum": 0},
                "lambda_lpips": {"type": "number", "minimum": 0},
                "lambda_pos": {"type": "number", "minimum": 0},
                "lambda_s": {"type": "number", "minimum": 0},
            },
        },
        "curriculum": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_spatial": {"type": "integer", "minimum": 1},
                "clamp_interval": {"type": "integer", "minimum": 1},
                "k_temporal_syn": {"type": "integer", "minimum": 1},
                "k_temporal_real": {"type": "integer", "minimum": 2},
                "n_temporal_syn": {"type": "integer", "minimum": 1},
                "n_temporal_real": {"type": "integer", "minimum": 1},
                "n_frames": {"type": "integer", "minimum": 2},
                "spatial_amplitude": {"type": "number", "minimum": 0, "maximum": 1},
                "spatial_ranges": _camera_ranges_schema(),
                "temporal_ranges": _camera_ranges_schema(),
            },
        },
        "oracle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sigma_pose": {"type": "number", "minimum": 0},
                "sigma_expr": {"type": "number", "minimum": 0},
                "sigma_pixel": {"type": "number", "minimum": 0},
                "w_view": {"type": "number", "minimum": 0},
                "w_expr": {"type": "number", "minimum": 0},
                "tau": {"type": "number", "exclusiveMinimum": 0},
                "gamma_lm": {"type": "number", "minimum": 0, "maximum": 1},
                # reserved for a real diffusion backend; the synthetic oracle
                # ignores it but it is carried through resolved configs
                "cfg_weight": {"type": "number", "minimum": 0},
            },
        },
    },
}


def default_config():
    """Fully resolved defaults; the schema's reference instance."""
    train = TrainLoopConfig()
    cur = CurriculumConfig()
    weights = LossWeights()
    corr = CorruptionModel()
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": 0,
        "mode": "progressive",
        "output_dir": None,
        "train": {
            "total_iters": train.total_iters,
            "resolution": train.resolution,
            "gaussians_per_triangle": train.gaussians_per_triangle,
            "update_interval": train.update_interval,
            "eval_interval": train.eval_interval,
            "checkpoint_interval": train.checkpoint_interval,
            "head_subdiv": train.head_subdiv,
            "head_proportions": list(train.head_proportions),
        },
        "learning_rates": dict(DEFAULT_LEARNING_RATES),
        "loss_weights": {
            "lambda_l1": weights.lambda_l1,
            "lambda_lpips": weights.lambda_lpips,
            "lambda_pos": weights.lambda_pos,
            "lambda_s": weights.lambda_s,
        },
        "curriculum": {
            "n_spatial": cur.n_spatial,
            "clamp_interval": cur.clamp_interval,
            "k_temporal_syn": cur.k_temporal_syn,
            "k_temporal_real": cur.k_temporal_real,
            "n_temporal_syn": cur.n_temporal_syn,
            "n_temporal_real": cur.n_temporal_real,
            "n_frames": cur.n_frames,
            "spatial_amplitude": cur.spatial_amplitude,
            "spatial_ranges": _ranges_dict(cur.spatial_ranges),
            "temporal_ranges": _ranges_dict(cur.temporal_ranges),
        },
        "oracle": {
            "sigma_pose": corr.sigma_pose,
            "sigma_expr": corr.sigma_expr,
            "sigma_pixel": corr.sigma_pixel,
            "w_view": corr.w_view,
            "w_expr": corr.w_expr,
            "tau": corr.tau,
            "gamma_lm": corr.gamma_lm,
            "cfg_weight": 3.5,
        },
    }


def _ranges_dict(r: CameraRanges):
    return {
        "distance": list(r.distance),
        "fovy": list(r.fovy),
        "elevation": list(r.elevation),
        "azimuth": list(r.azimuth),
    }


def _deep_merge(base, override, path="config"):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value, f"{path}.{key}")
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate_config(cfg):
    """Schema-check a resolved config; raises ConfigError naming the key path."""
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = ".".join(["config"] + [str(p) for p in exc.absolute_path])
        raise ConfigError(f"{path}: {exc.message}") from exc
    cur = cfg["curriculum"]
    if cur["k_temporal_syn"] >= cur["k_temporal_real"]:
        raise ConfigError(
            "config.curriculum: k_temporal_syn must be below k_temporal_real"
        )
    return cfg


def resolve_config(overrides=None):
    """Merge user overrides onto the defaults and validate the result."""
    if overrides is None:
        overrides = {}
    if not isinstance(overrides, dict):
        raise ConfigError("config: top level must be a mapping")
    unknown = set(overrides) - set(SCHEMA["properties"])
    if unknown:
        raise ConfigError(f"config.{sorted(unknown)[0]}: unknown key")
    merged = _deep_merge(default_config(), overrides)
    return validate_config(merged)


def load_config(path):
    """Read a YAML file and return the resolved, validated config dict."""
    try:
        with open(path) as f:
            overrides = yaml.safe_load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file is not valid YAML: {exc}") from exc
    return resolve_config(overrides or {})


def save_config(cfg, path):
    with open(path, "w") as f:
        yaml.safe_dump(cfg, f, sort_keys=True)


def to_objects(cfg):
    """Instantiate the runtime objects a training run needs from a config dict."""
    t = cfg["train"]
    train_cfg = TrainLoopConfig(
        update_interval=t["update_interval"],
        total_iters=t["total_iters"],
        resolution=t["resolution"],
        gaussians_per_triangle=t["gaussians_per_triangle"],
        mode=cfg["mode"],
        eval_interval=t["eval_interval"],
        checkpoint_interval=t["checkpoint_interval"],
        head_subdiv=t["head_subdiv"],
        head_proportions=tuple(t["head_proportions"]),
        learning_rates=dict(cfg["learning_rates"]),
    )
    c = cfg["curriculum"]
    curriculum = CurriculumConfig(
        n_spatial=c["n_spatial"],
        clamp_interval=c["clamp_interval"],
        k_temporal_syn=c["k_temporal_syn"],
        k_temporal_real=c["k_temporal_real"],
        n_temporal_syn=c["n_temporal_syn"],
        n_temporal_real=c["n_temporal_real"],
        n_frames=c["n_frames"],
        spatial_amplitude=c["spatial_amplitude"],
        spatial_ranges=CameraRanges(**{k: tuple(v) for k, v in c["spatial_ranges"].items()}),
        temporal_ranges=CameraRanges(**{k: tuple(v) for k, v in c["temporal_ranges"].items()}),
    )
    w = cfg["loss_weights"]
    weights = LossWeights(**w)
    o = {k: v for k, v in cfg["oracle"].items() if k != "cfg_weight"}
    corruption = CorruptionModel(**o)
    return train_cfg, curriculum, weights, corruption
