"""Full model: frozen encoder, tokenization pipeline, shared decoder and
the loss assembly producing one weighted total per sample."""

from dataclasses import dataclass

import numpy as np

from .config import STAGES
from .decoder import DecodeResult, SharedDecoder, derive_label_map
from .encoder import FrozenEncoder
from .losses import (
    LossReport,
    LossWeights,
    PerceptualExtractor,
    crf_loss,
    recon_losses,
    seg_loss,
    tv_loss,
    weighted_total,
)
from .nn import Module
from .pipeline import PatPipeline, PipelineOutput
from .quantize import vq_loss
from .rng import spawn
from .tensor import Tensor, avg_pool, bilinear_upsample, scope

__all__ = ["PatModel", "ModelOutput", "PatTokenizer"]


@dataclass
class ModelOutput:
    pipeline: PipelineOutput
    decode: DecodeResult

    def token_indices(self):
        maps = {name: self.pipeline.states[name].indices for name in STAGES}
        maps["latent"] = self.pipeline.latent_indices
        return maps


class PatModel(Module):
    def __init__(self, cfg, class_embeddings=None):
        super().__init__()
        self.cfg = cfg
        self.encoder = FrozenEncoder(cfg.d_enc, spawn(cfg.seed, "frozen_encoder"))
        self.perceptual = PerceptualExtractor(spawn(cfg.seed, "perceptual"))
        self.pipeline = PatPipeline(cfg, cfg.seed)
        self.decoder = SharedDecoder(cfg, spawn(cfg.seed, "decoder"), class_embeddings)
        self.weights = LossWeights(vq=cfg.w_vq, spatial=cfg.w_spatial,
                                   recon=cfg.w_recon, seg=cfg.w_seg)

    def forward(self, image, pyramid=None):
        if pyramid is None:
            pyramid = self.encoder(image)
        po = self.pipeline(image, pyramid)
        zq_maps = {name: po.states[name].z_q for name in STAGES}
        dr = self.decoder(po.z_latent, zq_maps, po.e_global)
        return ModelOutput(pipeline=po, decode=dr)

    __call__ = forward

    def loss(self, image, gt, pyramid=None):
        """Weighted total loss for one sample. Returns (total, LossReport, output)."""
        cfg = self.cfg
        out = self.forward(image, pyramid)
        po = out.pipeline

        with scope("loss/vq"):
            vq_terms = []
            for name in STAGES:
                st = po.states[name]
                cb = self.pipeline.stages[STAGES.index(name)].codebook
                vq_terms.append(vq_loss(st.vq_features, cb, st.indices.reshape(-1),
                                        beta=cfg.beta_vq))
            vq_terms.append(vq_loss(po.latent_features, self.pipeline.latent_codebook,
                                    po.latent_indices.reshape(-1), beta=cfg.beta_vq))
            vq_group = vq_terms[0]
            for t in vq_terms[1:]:
                vq_group = vq_group + t

        with scope("loss/spatial"):
            if cfg.no_spatial_align:
                tv = Tensor(0.0)
                crf = Tensor(0.0)
            else:
                z_q_mid = po.states["mid"].z_q
                mid_res = z_q_mid.shape[1]
                img_small = avg_pool(image.detach(), image.shape[1] // mid_res)
                tv = tv_loss(z_q_mid)
                crf = crf_loss(z_q_mid, img_small, sigma=cfg.crf_sigma)
            spatial_group = tv + crf

        with scope("loss/recon"):
            l1, l2, perc = recon_losses(out.decode.recon, image.detach(), self.perceptual)
            recon_group = l1 + l2 + perc

        with scope("loss/seg"):
            seg = out.decode.seg
            masks = seg.mask_logits
            factor = gt.shape[0] // masks.shape[1]
            if factor > 1:
                masks = bilinear_upsample(masks, factor)
            terms, match = seg_loss(
                masks, seg.class_logits, gt, cfg.num_classes,
                match_weights=(cfg.match_ce, cfg.match_bce, cfg.match_dice),
                no_object_weight=cfg.no_object_weight,
                exclude_background=cfg.exclude_background)
            seg_group = terms["mask_bce"] + terms["mask_dice"] + terms["class_ce"]

        total = weighted_total(vq_group, spatial_group, recon_group, seg_group,
                               self.weights)
        report = LossReport(
            vq=vq_group.item(), tv=tv.item(), crf=crf.item(),
            l1=l1.item(), l2=l2.item(), perceptual=perc.item(),
            mask_bce=terms["mask_bce"].item(), mask_dice=terms["mask_dice"].item(),
            class_ce=terms["class_ce"].item(),
            vq_group=vq_group.item(), spatial_group=spatial_group.item(),
            recon_group=recon_group.item(), seg_group=seg_group.item(),
            total=total.item())
        return total, report, out

    def label_map(self, out, hw=None):
        hw = hw or (self.cfg.image_size, self.cfg.image_size)
        return derive_label_map(out.decode.seg, hw, self.cfg.num_classes)

    # -- parameter bookkeeping -------------------------------------------------

    def trainable_parameters(self):
        return [(n, p) for n, p in self.named_parameters() if p.requires_grad]

    def parameter_shapes(self):
        return {n: tuple(p.shape) for n, p in self.named_parameters()}

    def load_state(self, params, strict=True):
        """Copy checkpoint arrays into the model parameters by name."""
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(params))
        if strict and missing:
            from .feature_io import IntegrityError
            raise IntegrityError(f"checkpoint lacks parameters: {missing}")
        for name, p in own.items():
            if name in params:
                arr = np.asarray(params[name], dtype=np.float64)
                if arr.shape != p.shape:
                    from .feature_io import IntegrityError
                    raise IntegrityError(
                        f"parameter '{name}': checkpoint shape {arr.shape} vs model {p.shape}")
                p.data[...] = arr


class PatTokenizer(Module):
    """Encoder + pipeline only: emits per-stage token index maps.

    The decoder and its weights are never constructed, so tokenization
    runs from a checkpoint even if every decoder entry was deleted —
    the detachability contract made operational.
    """

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.encoder = FrozenEncoder(cfg.d_enc, spawn(cfg.seed, "frozen_encoder"))
        self.pipeline = PatPipeline(cfg, cfg.seed)

    def load_state(self, params):
        from .feature_io import IntegrityError
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(params))
        if missing:
            raise IntegrityError(
                f"checkpoint lacks tokenizer parameters (codebooks/adapters): {missing}")
        for name, p in own.items():
            arr = np.asarray(params[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise IntegrityError(
                    f"parameter '{name}': checkpoint shape {arr.shape} vs model {p.shape}")
            p.data[...] = arr

    def tokenize(self, image, pyramid=None):
        from .tensor import no_grad
        with no_grad():
            if pyramid is None:
                pyramid = self.encoder(image)
            po = self.pipeline(image, pyramid)
        maps = {name: po.states[name].indices for name in STAGES}
        maps["latent"] = po.latent_indices
        return maps
