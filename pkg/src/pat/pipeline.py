"""The tokenization pipeline: side adapter, global tokens and the three
stage-wise VQ modules.

Information flow is strictly one-way between the two token families. The
pixel branch of a stage (residual chain x, quantized map z_q) and the
local token update never read the global tokens; the global tokens are
refreshed from the side features after each stage. This decoupling is a
tested invariant, not a convention: perturbing the global tokens must
leave every pixel-branch value bit-identical.

Per stage (mid shown, early/late analogous):

    x_mid = DownSampler(x_early)
    z_q_mid = vmf_vq(e_mid, align(proj(f_mid)) + x_mid)
    fused side tokens = z_mid + proj(f_mid at side grid)
    e_hat_mid = hs_attn(e_mid + TokenMixer(e_hat_early), kv(z_mid), kv(z_mid))
    e_hat_global = attn(e_global + TokenMixer(e_hat_mid), z_mid, z_mid)

The side adapter output is quantized by the latent codebook to z_latent.
"""

from dataclasses import dataclass

import numpy as np

from .config import STAGES
from .errors import ConfigError
from .nn import Conv, Linear, Mlp, Module, ModuleList, TransformerBlock, parameter
from .quantize import Codebook, attn, hs_attn, vmf_vq, vq
from .rng import spawn
from .tensor import Tensor, avg_pool, bilinear_upsample, l2_normalize, scope

__all__ = ["TokenMixer", "DownSampler", "StageState", "PipelineOutput",
           "PatStage", "SideAdapter", "PatPipeline", "align_map"]


def align_map(x, target_hw):
    """Bring a [c,H,W] map to a target resolution by power-of-two
    bilinear upsampling or mean pooling."""
    h, w = x.shape[1:]
    th, tw = target_hw
    if (h, w) == (th, tw):
        return x
    if th % h == 0 and tw % w == 0 and th // h == tw // w:
        return bilinear_upsample(x, th // h)
    if h % th == 0 and w % tw == 0 and h // th == w // tw:
        return avg_pool(x, h // th)
    raise ConfigError(f"cannot align map {x.shape} to {target_hw}")


class TokenMixer(Module):
    """Mixes a token set across the token axis, then remaps channels.

    Three linear layers act on the transposed tokens (n_in -> hidden ->
    hidden -> n_out) with GELU between, followed by a channel map
    d_in -> d_out. Output shape is always [n_out, d_out] regardless of
    the input token count matching n_in.
    """

    def __init__(self, n_in, n_out, d_in, d_out, rng, hidden=64):
        super().__init__()
        self.token_mlp = Mlp([n_in, hidden, hidden, n_out], rng)
        self.channel_map = Linear(d_in, d_out, rng)

    def __call__(self, tokens):
        mixed = self.token_mlp(tokens.T).T
        return self.channel_map(mixed)


class DownSampler(Module):
    """Strided conv shrinking a map by an integer factor (1, 2, 4 or 8)."""

    def __init__(self, c_in, c_out, factor, rng):
        super().__init__()
        if factor == 1:
            self.conv = Conv(c_in, c_out, 3, rng, stride=1, padding=1)
        elif factor == 2:
            self.conv = Conv(c_in, c_out, 3, rng, stride=2, padding=1)
        elif factor in (4, 8):
            self.conv = Conv(c_in, c_out, factor, rng, stride=factor, padding=0)
        else:
            raise ConfigError(f"unsupported downsampling factor {factor}")

    def __call__(self, x):
        return self.conv(x)


@dataclass
class StageState:
    """Everything a stage hands to its successor and to the decoder."""

    z: Tensor          # side features at this stage's fusion point [N_side, d_side]
    x: Tensor          # pixel residual [d_pix, H_s, W_s]
    e_local: Tensor    # updated local tokens [C_s, code_dim]
    z_q: Tensor        # quantized map [code_dim, H_s, W_s]
    indices: np.ndarray
    vq_features: Tensor  # features in assignment space (input to vq_loss)


@dataclass
class PipelineOutput:
    states: dict
    z_latent: Tensor
    latent_indices: np.ndarray
    latent_features: Tensor
    e_global: Tensor
    side_tokens: Tensor


class PatStage(Module):
    """One stage's trainable pieces: residual downsampler, feature
    projections, codebook and token mixers."""

    def __init__(self, name, cfg, c_prev_channels, prev_codes, rng):
        super().__init__()
        self.name = name
        scales = cfg.stage_scales()
        self.scale = scales[name]
        prev_scale = {"early": 8, "mid": scales["early"], "late": scales["mid"]}[name]
        self.down = DownSampler(c_prev_channels, cfg.code_dim,
                                prev_scale // self.scale, rng)
        self.proj_f = Conv(cfg.d_enc, cfg.code_dim, 1, rng)
        self.codebook = Codebook(cfg.stage_sizes()[name], cfg.code_dim,
                                 stage=name, rng=rng)
        self.proj_kv = Linear(cfg.d_side, cfg.code_dim, rng)
        self.fuse = Linear(cfg.d_enc, cfg.d_side, rng)
        self.mix_local = (TokenMixer(prev_codes, self.codebook.size, cfg.code_dim,
                                     cfg.code_dim, rng, hidden=cfg.token_mixer_hidden)
                          if prev_codes else None)
        self.mix_global = TokenMixer(self.codebook.size, cfg.n_global, cfg.code_dim,
                                     cfg.d_side, rng, hidden=cfg.token_mixer_hidden)
        # zero-init residual gate: the update starts as the identity and the
        # attention pathway opens as it becomes useful; a bare replacement
        # update collapses every query onto the token mean (see ledger)
        self.global_out = Linear(cfg.d_side, cfg.d_side, rng)
        self.global_out.w.data[:] = 0.0
        self.kappa = cfg.kappa

    def __call__(self, f_stage, f_side_flat, x_prev, e_prev, z_tokens, e_global,
                 side_hw, cfg):
        """Returns (StageState, fused side tokens, updated global tokens)."""
        base = cfg.base_grid
        target_hw = (self.scale * base, self.scale * base)

        with scope(f"{self.name}/pixel"):
            if cfg.no_pixel_residual:
                x_s = Tensor(np.zeros((cfg.code_dim,) + target_hw))
            else:
                x_s = self.down(x_prev)
            f_aligned = align_map(self.proj_f(f_stage), target_hw)
            vq_in = f_aligned + x_s
            flat = vq_in.reshape(cfg.code_dim, -1).T
            if cfg.no_vmf:
                z_q_flat, assign = vq(self.codebook, flat)
                vq_features = flat
            else:
                z_q_flat, assign = vmf_vq(self.codebook, flat)
                vq_features = l2_normalize(flat, axis=-1)
            z_q = z_q_flat.T.reshape(cfg.code_dim, *target_hw)

        with scope(f"{self.name}/local"):
            queries = self.codebook.tokens
            if self.mix_local is not None and not cfg.no_tokenmixer:
                queries = queries + self.mix_local(e_prev)
            kv = self.proj_kv(z_tokens)
            if cfg.no_vmf:
                e_local = attn(queries, kv, kv)
            else:
                e_local = hs_attn(queries, kv, kv, kappa=self.kappa)

        with scope(f"{self.name}/fuse"):
            fused = z_tokens + self.fuse(f_side_flat)

        with scope(f"{self.name}/global"):
            g_query = e_global
            if not cfg.no_tokenmixer:
                g_query = g_query + self.mix_global(e_local)
            e_global_new = e_global + self.global_out(attn(g_query, z_tokens, z_tokens))

        state = StageState(z=z_tokens, x=x_s, e_local=e_local, z_q=z_q,
                           indices=assign.indices.reshape(target_hw),
                           vq_features=vq_features)
        return state, fused, e_global_new


class SideAdapter(Module):
    """Patch-token transformer running beside the frozen encoder.

    Backbone features are fused into the token stream at fixed depth
    fractions {0, 1/4, 1/2, 3/4}; the three pyramid stages hang off the
    last three fusion points.
    """

    def __init__(self, cfg, rng):
        super().__init__()
        self.patch = 8  # side grid equals the base grid
        self.embed = Conv(3, cfg.d_side, self.patch, rng, stride=self.patch)
        n_side = cfg.base_grid * cfg.base_grid
        self.pos = parameter(rng, n_side, cfg.d_side, scale=0.02)
        self.blocks = ModuleList(
            [TransformerBlock(cfg.d_side, rng, mlp_ratio=cfg.mlp_ratio)
             for _ in range(cfg.side_layers)])
        self.fuse0 = Linear(cfg.d_enc, cfg.d_side, rng)
        depths = (0.0, 0.25, 0.5, 0.75)
        self.fusion_layers = [int(round(f * cfg.side_layers)) for f in depths]
        if len(set(self.fusion_layers)) != 4:
            raise ConfigError(
                f"side_layers={cfg.side_layers} cannot host 4 distinct fusion depths")

    def tokens_from_image(self, image):
        t = self.embed(image)
        return t.reshape(t.shape[0], -1).T + self.pos


class PatPipeline(Module):
    """Side adapter + stage chain + latent quantization."""

    def __init__(self, cfg, seed=None):
        super().__init__()
        self.cfg = cfg
        seed = cfg.seed if seed is None else seed
        self.adapter = SideAdapter(cfg, spawn(seed, "adapter"))
        sizes = cfg.stage_sizes()
        prev_codes = {"early": 0, "mid": sizes["early"], "late": sizes["mid"]}
        prev_channels = {"early": 3, "mid": cfg.code_dim, "late": cfg.code_dim}
        self.stages = ModuleList([
            PatStage(name, cfg, prev_channels[name], prev_codes[name],
                     spawn(seed, "stage", name))
            for name in STAGES])
        rng_lat = spawn(seed, "latent")
        self.latent_codebook = Codebook(cfg.codebook_sizes[3], cfg.code_dim,
                                        stage="latent", rng=rng_lat)
        self.proj_latent = Linear(cfg.d_side, cfg.code_dim, rng_lat)
        if cfg.unified_tokens:
            self.unify = Linear(cfg.code_dim, cfg.d_side, spawn(seed, "unify"))
            self.e_global = None
        else:
            self.unify = None
            # unit-scale rows: the queries must produce O(1) score spread
            # against the side tokens or every query receives the same
            # attention mixture and never specializes
            self.e_global = parameter(spawn(seed, "global"), cfg.n_global,
                                      cfg.d_side, scale=1.0)

    def global_tokens(self):
        if self.unify is not None:
            return self.unify(self.latent_codebook.tokens[:self.cfg.n_global])
        return self.e_global

    def __call__(self, image, pyramid):
        cfg = self.cfg
        base = cfg.base_grid
        side_hw = (base, base)
        tokens = self.adapter.tokens_from_image(image)
        e_global = self.global_tokens()
        stage_at_layer = {
            self.adapter.fusion_layers[i + 1]: name for i, name in enumerate(STAGES)}
        depth0 = self.adapter.fusion_layers[0]

        states = {}
        x = image
        e_prev = None
        for layer_idx, block in enumerate(self.adapter.blocks):
            if layer_idx == depth0:
                with scope("fuse0"):
                    f0 = align_map(pyramid.latent, side_hw)
                    tokens = tokens + self.adapter.fuse0(f0.reshape(cfg.d_enc, -1).T)
            elif layer_idx in stage_at_layer:
                name = stage_at_layer[layer_idx]
                stage = self.stages[STAGES.index(name)]
                f_stage = pyramid.stage(name)
                f_side = align_map(f_stage, side_hw).reshape(cfg.d_enc, -1).T
                state, tokens, e_global = stage(
                    f_stage, f_side, x, e_prev, tokens, e_global, side_hw, cfg)
                states[name] = state
                x = state.x
                e_prev = state.e_local
            with scope(f"side_block{layer_idx}"):
                tokens = block(tokens)

        with scope("latent_vq"):
            lat_feats = self.proj_latent(tokens)
            if cfg.no_vmf:
                z_lat_flat, assign = vq(self.latent_codebook, lat_feats)
                lat_features = lat_feats
            else:
                z_lat_flat, assign = vmf_vq(self.latent_codebook, lat_feats)
                lat_features = l2_normalize(lat_feats, axis=-1)
            z_latent = z_lat_flat.T.reshape(cfg.code_dim, base, base)

        return PipelineOutput(states=states, z_latent=z_latent,
                              latent_indices=assign.indices.reshape(base, base),
                              latent_features=lat_features,
                              e_global=e_global, side_tokens=tokens)

    def all_codebooks(self):
        return [s.codebook for s in self.stages] + [self.latent_codebook]
