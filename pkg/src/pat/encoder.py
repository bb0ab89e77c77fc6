"""Deterministic frozen encoder producing a multi-scale feature pyramid.

A seeded conv stack stands in for a pretrained backbone: three stage maps
at 4x / 2x / 1x of the base grid (base = image/8) plus a latent grid at
1x. Weights are never trainable; the same seed and input always produce
bit-identical features. Real backbone features can be swapped in from an
FPT1 file with the same layout.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .feature_io import read_fpt1_file
from .nn import Conv, Module
from .tensor import Tensor, scope

__all__ = ["FrozenPyramid", "FrozenEncoder", "encode_frozen", "pyramid_from_fpt1"]

FEATURE_NAMES = ("f_clip_early", "f_clip_mid", "f_clip_late", "f_clip_latent")


@dataclass
class FrozenPyramid:
    """Stage feature maps [d_enc, H_s, W_s]; early = 4x late, mid = 2x late."""

    early: Tensor
    mid: Tensor
    late: Tensor
    latent: Tensor

    def stage(self, name):
        return getattr(self, name)

    def check_scales(self):
        eh, ew = self.early.shape[1:]
        mh, mw = self.mid.shape[1:]
        lh, lw = self.late.shape[1:]
        if (eh, ew) != (4 * lh, 4 * lw) or (mh, mw) != (2 * lh, 2 * lw):
            raise DataError(
                f"pyramid scales violated: early {self.early.shape}, "
                f"mid {self.mid.shape}, late {self.late.shape} (want 4x/2x/1x)")
        return self


class FrozenEncoder(Module):
    """Seeded conv stack; parameters are frozen at construction."""

    def __init__(self, d_enc, rng):
        super().__init__()
        self.c_early = Conv(3, d_enc, 3, rng, stride=2, padding=1)
        self.c_mid = Conv(d_enc, d_enc, 3, rng, stride=2, padding=1)
        self.c_late = Conv(d_enc, d_enc, 3, rng, stride=2, padding=1)
        self.c_latent = Conv(d_enc, d_enc, 3, rng, stride=1, padding=1)
        for p in self.parameters():
            p.requires_grad = False

    def __call__(self, image):
        if image.ndim != 3 or image.shape[0] != 3:
            raise ConfigError(f"encoder expects a [3,H,W] image, got {image.shape}")
        if image.shape[1] % 8 or image.shape[2] % 8:
            raise ConfigError(
                f"image extents must be divisible by 8, got {image.shape[1:]}")
        with scope("frozen_encoder"):
            early = self.c_early(image).gelu()
            mid = self.c_mid(early).gelu()
            late = self.c_late(mid).gelu()
            latent = self.c_latent(late).gelu()
        return FrozenPyramid(early, mid, late, latent).check_scales()


_encoder_cache = {}


def encode_frozen(image, seed, d_enc=48):
    """Run the frozen stub for a given seed (encoders are cached per seed/width)."""
    from .rng import spawn

    key = (int(seed), int(d_enc))
    enc = _encoder_cache.get(key)
    if enc is None:
        enc = FrozenEncoder(d_enc, spawn(seed, "frozen_encoder"))
        _encoder_cache[key] = enc
    return enc(image)


def pyramid_from_fpt1(path):
    """Load an exported feature pyramid; values widen from float32 to float64."""
    tensors = read_fpt1_file(path)
    missing = [n for n in FEATURE_NAMES if n not in tensors]
    if missing:
        raise DataError(f"feature file {path} lacks tensors: {missing}")
    maps = []
    for name in FEATURE_NAMES:
        arr = tensors[name]
        if arr.ndim != 3:
            raise DataError(f"{path}: tensor {name} must be [d,H,W], got {arr.shape}")
        maps.append(Tensor(np.asarray(arr, dtype=np.float64)))
    return FrozenPyramid(*maps).check_scales()
