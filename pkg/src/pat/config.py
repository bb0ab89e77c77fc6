"""Run configuration: presets, JSON round-trip and schema validation.

Every CLI flag mirrors a field here; a JSON config file provides the base
values and flags override it. The default field values reproduce the
baseline (no ablations, pyramid scales 4/2/1, group weights
0.1/0.1/1.0/1.0, AdamW-style lr 1e-4 / weight decay 1e-4).
"""

import json
from dataclasses import asdict, dataclass, field, fields

import jsonschema

from .errors import ConfigError

__all__ = ["RunConfig", "PRESETS", "CONFIG_SCHEMA", "load_config"]

STAGES = ("early", "mid", "late")


@dataclass
class RunConfig:
    preset: str = "toy"
    seed: int = 0
    # data
    image_size: int = 64
    num_classes: int = 6
    train_samples: int = 500
    eval_samples: int = 100
    # model dims
    d_enc: int = 48
    d_side: int = 64
    side_layers: int = 4
    code_dim: int = 32
    codebook_sizes: tuple = (32, 16, 8, 64)  # early, mid, late, latent
    n_global: int = 16
    decoder_width: int = 64
    mask_dim: int = 32
    mlp_ratio: int = 2
    token_mixer_hidden: int = 64
    kappa: float = 20.0
    scale_schedule: tuple = (4, 2, 1)
    # losses
    w_vq: float = 0.1
    w_spatial: float = 0.1
    w_recon: float = 1.0
    w_seg: float = 1.0
    beta_vq: float = 0.25
    crf_sigma: float = 0.15
    match_ce: float = 2.0
    match_bce: float = 5.0
    match_dice: float = 5.0
    no_object_weight: float = 0.1
    exclude_background: bool = False
    restart_dead_codes: bool = False
    # optimizer / loop
    lr: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    steps: int = 2000
    batch_size: int = 2
    log_every: int = 10
    eval_every: int = 500
    # ablation flags (Table of toggles; defaults are the baseline row)
    no_vmf: bool = False
    no_spatial_align: bool = False
    no_tokenmixer: bool = False
    no_pixel_residual: bool = False
    unified_tokens: bool = False
    separate_decoding: bool = False
    fpn_stages: tuple = ("early", "mid", "late")
    # feature source: deterministic stub or imported FPT1 files from the manifest
    feature_source: str = "stub"
    class_embed_path: str = ""

    def validate(self):
        if self.image_size % 8:
            raise ConfigError(f"image_size must be divisible by 8, got {self.image_size}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2 (background + at least one shape)")
        if self.num_classes > 255:
            raise ConfigError("num_classes must fit below the ignore label 255")
        if self.kappa < 0:
            raise ConfigError(f"kappa must be nonnegative, got {self.kappa}")
        if len(self.codebook_sizes) != 4:
            raise ConfigError("codebook_sizes needs 4 entries (early, mid, late, latent)")
        if len(self.scale_schedule) != 3:
            raise ConfigError("scale_schedule needs 3 entries (early, mid, late)")
        base = self.image_size // 8
        for s in self.scale_schedule:
            if s < 1 or (s & (s - 1)):
                raise ConfigError(f"scale_schedule entries must be powers of two >= 1, got {s}")
            if s > 8:
                raise ConfigError(f"scale factor {s} exceeds the image/base ratio 8")
            if s * base > self.image_size:
                raise ConfigError(f"scale factor {s} overflows the image extent")
        if sorted(self.scale_schedule, reverse=True) != list(self.scale_schedule):
            raise ConfigError("scale_schedule must be non-increasing early >= mid >= late")
        if self.unified_tokens and self.n_global > self.codebook_sizes[3]:
            raise ConfigError("unified_tokens requires n_global <= latent codebook size")
        unknown = set(self.fpn_stages) - set(STAGES)
        if unknown:
            raise ConfigError(f"unknown fpn stages: {sorted(unknown)}")
        if self.feature_source not in ("stub", "fpt1"):
            raise ConfigError(f"feature_source must be 'stub' or 'fpt1', got {self.feature_source}")
        return self

    @property
    def base_grid(self):
        return self.image_size // 8

    def stage_sizes(self):
        """Codebook size per pyramid stage, without the latent entry."""
        return dict(zip(STAGES, self.codebook_sizes[:3]))

    def stage_scales(self):
        return dict(zip(STAGES, self.scale_schedule))

    def to_json(self):
        d = asdict(self)
        for k in ("codebook_sizes", "scale_schedule", "fpn_stages"):
            d[k] = list(d[k])
        return json.dumps(d, indent=2)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged = {**d}
        for k in ("codebook_sizes", "scale_schedule", "fpn_stages"):
            if k in merged:
                merged[k] = tuple(merged[k])
        return cls(**merged).validate()


def _preset_paper():
    return RunConfig(
        preset="paper",
        image_size=640,
        num_classes=171,
        d_enc=768,
        d_side=240,
        side_layers=8,
        codebook_sizes=(128, 64, 32, 256),
        n_global=32,
        decoder_width=256,
        token_mixer_hidden=128,
        lr=1e-4,
        steps=120_000,
        batch_size=12,
    )


PRESETS = {
    "toy": RunConfig,
    "paper": _preset_paper,
}


def _schema_for(dc):
    type_map = {int: "integer", float: "number", str: "string", bool: "boolean"}
    props = {}
    for f in fields(dc):
        if f.name in ("codebook_sizes", "scale_schedule"):
            props[f.name] = {"type": "array", "items": {"type": "integer"}}
        elif f.name == "fpn_stages":
            props[f.name] = {"type": "array", "items": {"enum": list(STAGES)}}
        else:
            props[f.name] = {"type": type_map[type(f.default)]}
    props["lr"] = {"type": "number"}
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "type": "object",
        "properties": props,
        "additionalProperties": False,
    }


CONFIG_SCHEMA = _schema_for(RunConfig)


def load_config(path=None, preset=None, overrides=None):
    """Assemble a validated RunConfig from preset, JSON file and overrides."""
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset '{preset}' (have {sorted(PRESETS)})")
        cfg = asdict(PRESETS[preset]())
    else:
        cfg = asdict(RunConfig())
    if path:
        with open(path, "r", encoding="utf-8") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
        try:
            jsonschema.validate(data, CONFIG_SCHEMA)
        except jsonschema.ValidationError as e:
            raise ConfigError(f"config file {path} violates the schema: {e.message}") from e
        cfg.update(data)
    if overrides:
        cfg.update(overrides)
    return RunConfig.from_dict(cfg)
