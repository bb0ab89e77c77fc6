"""Shared top-down decoder: SPADE-conditioned fusion of the tokenized
pyramid into the latent map, decoder-guided global-token refinement, and
the reconstruction / mask heads.

Decoding walks the pyramid late -> mid -> early. Each stage upsamples the
running latent (factor 1 on the first stage under the default schedule),
modulates it with that stage's quantized map through SPADE, runs one
transformer layer over the flattened positions (fixed 2-D sinusoidal
position codes), and refreshes the global tokens by attending to the
decoded features. Two plain transformer layers finish the latent.
"""

from dataclasses import dataclass

import numpy as np

from .config import STAGES
from .errors import ConfigError
from .nn import (
    Conv,
    ConvTranspose,
    Linear,
    Mlp,
    Module,
    ModuleList,
    TransformerBlock,
    sinusoidal_positions_2d,
)
from .quantize import attn
from .tensor import Tensor, bilinear_upsample, l2_normalize, no_grad, scope, softmax

__all__ = ["SpadeBlock", "DecoderTrunk", "ReconHead", "MaskHead", "SegOutput",
           "SharedDecoder", "DecodeResult", "derive_label_map"]


class SpadeBlock(Module):
    """Spatially adaptive modulation: (1 + gamma(c)) * norm(x) + beta(c).

    The normalization is parameter-free per channel; the two condition
    convs are zero-initialized so the block starts as an exact identity
    on the normalized input.
    """

    def __init__(self, channels, cond_channels, rng, eps=1e-5):
        super().__init__()
        self.gamma = Conv(cond_channels, channels, 3, rng, padding=1, zero_init=True)
        self.beta = Conv(cond_channels, channels, 3, rng, padding=1, zero_init=True)
        self.eps = eps

    def normalize(self, x):
        c = x.shape[0]
        flat = x.reshape(c, -1)
        mu = flat.mean(axis=1, keepdims=True)
        centered = flat - mu
        var = (centered * centered).mean(axis=1, keepdims=True)
        return (centered * ((var + self.eps) ** -0.5)).reshape(*x.shape)

    def __call__(self, x, cond):
        if x.shape[1:] != cond.shape[1:]:
            raise ConfigError(
                f"spade: feature map {x.shape} vs condition {cond.shape}")
        normed = self.normalize(x)
        return normed * (1.0 + self.gamma(cond)) + self.beta(cond)


def _zero_linear(dim, rng):
    # residual gate for the global-token refresh; identity at init
    lin = Linear(dim, dim, rng)
    lin.w.data[:] = 0.0
    return lin


class DecoderTrunk(Module):
    """Three transformer+SPADE stages (late->mid->early) plus two plain
    transformer layers."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        self.proj_in = Linear(cfg.code_dim, cfg.decoder_width, rng)
        self.proj_g = Linear(cfg.d_side, cfg.decoder_width, rng)
        self.spades = ModuleList(
            [SpadeBlock(cfg.decoder_width, cfg.code_dim, rng) for _ in STAGES])
        self.g_out = ModuleList(
            [_zero_linear(cfg.decoder_width, rng) for _ in STAGES])
        self.blocks = ModuleList(
            [TransformerBlock(cfg.decoder_width, rng, mlp_ratio=cfg.mlp_ratio)
             for _ in STAGES])
        self.tail = ModuleList(
            [TransformerBlock(cfg.decoder_width, rng, mlp_ratio=cfg.mlp_ratio)
             for _ in range(2)])

    def __call__(self, z_latent, zq_maps, e_global):
        """Returns (decoded map [width, He, We], refined global tokens)."""
        cfg = self.cfg
        base = cfg.base_grid
        width = cfg.decoder_width
        scales = cfg.stage_scales()
        order = tuple(reversed(STAGES))  # late, mid, early

        tokens = self.proj_in(z_latent.reshape(cfg.code_dim, -1).T)
        g = self.proj_g(e_global)
        cur = 1
        h = w = base
        x = tokens.T.reshape(width, h, w)
        for i, name in enumerate(order):
            with scope(f"decode/{name}"):
                factor = scales[name] // cur
                if scales[name] % cur:
                    raise ConfigError(
                        f"decode schedule not monotone at {name}: {scales[name]} vs {cur}")
                if factor > 1:
                    x = bilinear_upsample(x, factor)
                    cur, h, w = scales[name], h * factor, w * factor
                if name in cfg.fpn_stages:
                    zq = zq_maps[name]
                    if zq.shape[1:] != (h, w):
                        raise ConfigError(
                            f"missing/misshaped condition for stage {name}: "
                            f"{zq.shape} at resolution {(h, w)}")
                    x = self.spades[i](x, zq)
                flat = x.reshape(width, -1).T + sinusoidal_positions_2d(h, w, width)
                flat = self.blocks[i](flat)
                x = flat.T.reshape(width, h, w)
                g = g + self.g_out[i](attn(g, flat, flat))
        with scope("decode/tail"):
            flat = x.reshape(width, -1).T
            for block in self.tail:
                flat = block(flat)
            x = flat.T.reshape(width, h, w)
        return x, g


class ReconHead(Module):
    """Transposed-conv head recovering the input image resolution."""

    def __init__(self, cfg, rng):
        super().__init__()
        width = cfg.decoder_width
        out_res = cfg.image_size
        in_res = cfg.stage_scales()["early"] * cfg.base_grid
        if out_res % in_res:
            raise ConfigError(f"decoder output {in_res} does not divide image {out_res}")
        self.pre_factor = (out_res // in_res) // 2
        if self.pre_factor * 2 * in_res != out_res:
            raise ConfigError(f"reconstruction factor {out_res // in_res} must be even")
        self.mix = Conv(width, width, 3, rng, padding=1)
        self.up = ConvTranspose(width, 3, 4, rng, stride=2, padding=1)
        # start near mid-gray: an untrained head should reconstruct at the
        # flat-gray baseline, not at clipped saturation
        self.up.w.data *= 0.05
        self.up.b.data[:] = 0.5

    def __call__(self, x):
        h = self.mix(x).gelu()
        if self.pre_factor > 1:
            h = bilinear_upsample(h, self.pre_factor)
        return self.up(h)


@dataclass
class SegOutput:
    """Per-query mask logits [Nq,H,W] and class logits [Nq,K+1]
    (last column: no-object)."""

    mask_logits: Tensor
    class_logits: Tensor


class MaskHead(Module):
    """Masks from the product of projected queries and decoded features;
    class logits from a linear classifier, or cosine scores against
    imported text embeddings when provided."""

    def __init__(self, cfg, rng, class_embeddings=None):
        super().__init__()
        width = cfg.decoder_width
        self.proj_q = Mlp([width, width, cfg.mask_dim], rng)
        self.proj_z = Conv(width, cfg.mask_dim, 1, rng)
        if class_embeddings is not None:
            emb = np.asarray(class_embeddings, dtype=np.float64)
            if emb.shape[0] != cfg.num_classes:
                raise ConfigError(
                    f"class embeddings rows {emb.shape[0]} != num_classes {cfg.num_classes}")
            self.text = Tensor(emb)
            self.proj_cls = Linear(width, emb.shape[1], rng)
            self.no_object = parameter_row(rng, emb.shape[1])
            self.logit_scale = 10.0
            self.classifier = None
        else:
            self.text = None
            self.classifier = Linear(width, cfg.num_classes + 1, rng)

    def __call__(self, x, g):
        queries = self.proj_q(g)
        feats = self.proj_z(x)
        c, h, w = feats.shape
        masks = (queries @ feats.reshape(c, -1)).reshape(queries.shape[0], h, w)
        if self.text is not None:
            qn = l2_normalize(self.proj_cls(g), axis=-1)
            table = l2_normalize(self.text, axis=-1).detach()
            cos = qn @ table.T
            noobj = qn @ l2_normalize(self.no_object.reshape(1, -1), axis=-1).T
            class_logits = concat_cols(cos, noobj) * self.logit_scale
        else:
            class_logits = self.classifier(g)
        return SegOutput(mask_logits=masks, class_logits=class_logits)


def parameter_row(rng, dim):
    return Tensor(rng.standard_normal(dim) / np.sqrt(dim), requires_grad=True)


def concat_cols(a, b):
    """Column concatenation via padded embedding (keeps the op set small)."""
    na, ca = a.shape
    cb = b.shape[1]
    left = a @ Tensor(np.eye(ca, ca + cb))
    right = b @ Tensor(np.eye(cb, ca + cb, k=ca))
    return left + right


@dataclass
class DecodeResult:
    recon: Tensor
    seg: SegOutput
    decoded: Tensor
    e_global: Tensor


class SharedDecoder(Module):
    """One trunk feeding both heads; under `separate_decoding` each head
    gets its own trunk so no gradients cross between the two tasks."""

    def __init__(self, cfg, rng, class_embeddings=None):
        super().__init__()
        self.cfg = cfg
        self.trunk = DecoderTrunk(cfg, rng)
        self.trunk_seg = DecoderTrunk(cfg, rng) if cfg.separate_decoding else None
        self.recon_head = ReconHead(cfg, rng)
        self.mask_head = MaskHead(cfg, rng, class_embeddings)

    def __call__(self, z_latent, zq_maps, e_global):
        decoded, g = self.trunk(z_latent, zq_maps, e_global)
        recon = self.recon_head(decoded)
        if self.trunk_seg is not None:
            decoded_seg, g_seg = self.trunk_seg(z_latent, zq_maps, e_global)
            seg = self.mask_head(decoded_seg, g_seg)
            g_out = g_seg
        else:
            seg = self.mask_head(decoded, g)
            g_out = g
        return DecodeResult(recon=recon, seg=seg, decoded=decoded, e_global=g_out)


def derive_label_map(seg, out_hw, num_classes):
    """Per-pixel labels: argmax_k sum_q softmax(class_q)[k] * sigmoid(mask_q)."""
    with no_grad():
        probs = softmax(seg.class_logits, axis=-1).data[:, :num_classes]
        masks = seg.mask_logits
        h, w = masks.shape[1:]
        if (h, w) != tuple(out_hw):
            if out_hw[0] % h or out_hw[1] % w:
                raise ConfigError(f"cannot upsample masks {masks.shape} to {out_hw}")
            masks = bilinear_upsample(masks, out_hw[0] // h)
        sig = 1.0 / (1.0 + np.exp(-masks.data))
        scores = np.einsum("qk,qhw->khw", probs, sig)
        return scores.argmax(axis=0)
