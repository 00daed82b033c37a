"""JSON schemas for run configs and the service wire format.

Configs are strict: unknown keys are rejected so ablation sweeps stay honest
config diffs.
"""

from __future__ import annotations

import jsonschema

from .synthkin import FAMILIES


class ConfigViolation(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


def _obj(properties: dict, required: list | None = None) -> dict:
    return {"type": "object", "additionalProperties": False,
            "properties": properties, **({"required": required} if required else {})}


_INT = {"type": "integer"}
_NUM = {"type": "number"}
_STR = {"type": "string"}
_BOOL = {"type": "boolean"}


def _int_min(m):
    return {"type": "integer", "minimum": m}


NN_SCHEMA = _obj({
    "d_model": _int_min(8), "n_heads": _int_min(1), "depth": _int_min(1),
    "ffn_expansion": _int_min(1), "norm_eps": _NUM,
})

FOURIER_SCHEMA = _obj({"n_freq": _int_min(1), "sigma": {"type": "number", "exclusiveMinimum": 0},
                       "seed": _INT})

OPTIM_SCHEMA = _obj({
    "steps": _int_min(1), "batch_size": _int_min(1), "lr": {"type": "number", "exclusiveMinimum": 0},
    "betas": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
    "weight_decay": {"type": "number", "minimum": 0}, "warmup": _int_min(0),
    "grad_clip": {"type": "number", "minimum": 0},
    "lr_schedule": {"enum": ["constant", "cosine"]},
})

VAE_SCHEMA = _obj({
    "horizon": _int_min(2), "t_c": {"enum": [2, 4, 8, 16, 32, 64]},
    "grid_h": _int_min(1), "grid_w": _int_min(1), "latent_dim": _int_min(1),
    "kl_weight": {"type": "number", "minimum": 0},
    "mae_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    "nn": NN_SCHEMA, "fourier": FOURIER_SCHEMA,
    "frame_dim": _int_min(1), "patch_size": _int_min(1), "rope_base": _NUM,
    "max_encoder_tokens": _int_min(1),
})

GEN_SCHEMA = _obj({
    "nn": NN_SCHEMA, "fourier": FOURIER_SCHEMA, "n_labels": _int_min(1),
    "p_drop": {"type": "number", "minimum": 0, "maximum": 1},
    "sigma_aug": {"type": "number", "minimum": 0},
})

SYNTH_SCHEMA = _obj({
    "families": {"type": "array", "items": {"enum": list(FAMILIES)}, "minItems": 1},
    "count": _int_min(1), "n_tracks": _int_min(1), "horizon": _int_min(2),
    "resolution": _int_min(32), "seed": _INT, "params": {"type": "object"},
}, required=["families", "count"])

TRAIN_VAE_SCHEMA = _obj({
    "dataset": _STR, "vae": VAE_SCHEMA, "optim": OPTIM_SCHEMA,
    "tracks_per_scene": _int_min(2), "time_subset": _int_min(1),
    "limit": _int_min(1), "seed": _INT,
}, required=["dataset"])

TRAIN_GEN_SCHEMA = _obj({
    "dataset": _STR, "vae_checkpoint": _STR, "gen": GEN_SCHEMA, "optim": OPTIM_SCHEMA,
    "encode_tracks": _int_min(1), "limit": _int_min(1), "max_pokes": _int_min(0), "seed": _INT,
}, required=["dataset", "vae_checkpoint"])

EVAL_SCHEMA = _obj({
    "dataset": _STR, "vae_checkpoint": _STR, "gen_checkpoint": _STR, "samples_dir": _STR,
    "scene": _STR,
    "num_samples": _int_min(1), "nfe": _int_min(1), "n_pokes": _int_min(0),
    "encode_tracks": _int_min(1), "metric_grid": _int_min(1), "pck_space": _int_min(1),
    "pck_thresholds": {"type": "array", "items": _NUM, "minItems": 1},
    "knn_k": _int_min(1), "var_threshold": _NUM, "max_eval_tracks": _int_min(1),
    "scenes": _int_min(1), "seed": _INT,
}, required=["dataset", "vae_checkpoint"])

SAMPLE_SCHEMA = _obj({
    "gen_checkpoint": _STR, "vae_checkpoint": _STR, "dataset": _STR, "scene": _STR,
    "pokes": {"type": "array", "items": _obj({
        "anchor": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "target": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "t_star": _int_min(0),
    }, required=["anchor", "target", "t_star"])},
    "num_samples": _int_min(1), "nfe": _int_min(1),
    "query_grid": _int_min(1), "query_points": {"type": "array", "items": {
        "type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}},
    "label": _INT, "seed": _INT,
}, required=["gen_checkpoint", "dataset", "scene"])

ABLATE_SCHEMA = _obj({
    "dataset": _STR, "t_c_list": {"type": "array", "items": {"enum": [2, 4, 8, 16, 32, 64]},
                                  "minItems": 1},
    "vae": VAE_SCHEMA, "gen": GEN_SCHEMA, "vae_optim": OPTIM_SCHEMA, "gen_optim": OPTIM_SCHEMA,
    "tracks_per_scene": _int_min(2), "encode_tracks": _int_min(1),
    "eval_scenes": _int_min(1), "num_samples": _int_min(1), "nfe": _int_min(1),
    "limit": _int_min(1), "seed": _INT,
}, required=["dataset", "t_c_list"])

COMMAND_SCHEMAS = {
    "synth": SYNTH_SCHEMA,
    "train-vae": TRAIN_VAE_SCHEMA,
    "train-gen": TRAIN_GEN_SCHEMA,
    "eval": EVAL_SCHEMA,
    "sample": SAMPLE_SCHEMA,
    "ablate-compression": ABLATE_SCHEMA,
}

# service wire format (shipped to the UI as its contract)
SAMPLE_REQUEST_SCHEMA = _obj({
    "scene_id": _STR,
    "pokes": {"type": "array", "items": _obj({
        "anchor": {"type": "array", "items": {"type": "number", "minimum": -1, "maximum": 1},
                   "minItems": 2, "maxItems": 2},
        "target": {"type": "array", "items": {"type": "number", "minimum": -1, "maximum": 1},
                   "minItems": 2, "maxItems": 2},
        "t_star": _int_min(0),
    }, required=["anchor", "target", "t_star"])},
    "num_samples": {"type": "integer", "minimum": 1, "maximum": 64},
    "nfe": {"type": "integer", "minimum": 1, "maximum": 200},
    "query_points": {"type": "array", "items": {
        "type": "array", "items": {"type": "number", "minimum": -1, "maximum": 1},
        "minItems": 2, "maxItems": 2}},
    "seed": _INT,
}, required=["scene_id"])


def validate_config(doc: dict, command: str) -> None:
    """Raise ConfigViolation with a $.field.path on the first schema error."""
    schema = COMMAND_SCHEMAS[command]
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        path = "$" + "".join(
            f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)
        raise ConfigViolation(path, err.message)
