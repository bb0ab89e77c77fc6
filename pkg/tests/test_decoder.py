import numpy as np
import pytest

from pat.config import RunConfig, STAGES
from pat.decoder import (
    MaskHead,
    SegOutput,
    SharedDecoder,
    SpadeBlock,
    derive_label_map,
)
from pat.errors import ConfigError
from pat.gradcheck import grad_check
from pat.model import PatModel
from pat.rng import make_rng
from pat.tensor import Tensor, trace_ops

rng = make_rng(4242)


def micro_cfg(**kw):
    base = dict(image_size=16, num_classes=4, d_enc=8, d_side=12, side_layers=4,
                codebook_sizes=(6, 5, 4, 8), n_global=4, decoder_width=16,
                mask_dim=8, token_mixer_hidden=8, seed=3)
    base.update(kw)
    return RunConfig(**base).validate()


def randt(*shape, grad=False):
    return Tensor(rng.standard_normal(shape), requires_grad=grad)


class TestSpade:
    def test_identity_at_init(self):
        sp = SpadeBlock(5, 3, make_rng(0))
        x = randt(5, 4, 4)
        cond = randt(3, 4, 4)
        out = sp(x, cond)
        assert np.array_equal(out.data, sp.normalize(x).data)

    def test_constant_inputs_give_constant_output(self):
        sp = SpadeBlock(4, 3, make_rng(0))
        sp.gamma.w.data[:] = make_rng(1).standard_normal(sp.gamma.w.shape) * 0.1
        sp.beta.w.data[:] = make_rng(2).standard_normal(sp.beta.w.shape) * 0.1
        x = Tensor(np.tile(rng.standard_normal((4, 1, 1)), (1, 5, 5)))
        cond = Tensor(np.tile(rng.standard_normal((3, 1, 1)), (1, 5, 5)))
        out = sp(x, cond).data
        for c in range(4):
            inner = out[c, 1:-1, 1:-1]  # border rows see conv padding
            assert np.allclose(inner, inner[0, 0])

    def test_resolution_mismatch(self):
        sp = SpadeBlock(4, 3, make_rng(0))
        with pytest.raises(ConfigError):
            sp(randt(4, 4, 4), randt(3, 8, 8))

    def test_gradients(self):
        sp = SpadeBlock(3, 2, make_rng(0))
        sp.gamma.w.data[:] = make_rng(3).standard_normal(sp.gamma.w.shape) * 0.2
        sp.beta.w.data[:] = make_rng(4).standard_normal(sp.beta.w.shape) * 0.2
        cond = randt(2, 3, 3)
        w = randt(3, 3, 3)
        rep = grad_check(lambda x: (sp(x, cond) * w).sum(), randt(3, 3, 3))
        assert rep.passed, rep
        x = randt(3, 3, 3)
        rep = grad_check(lambda g: ((sp.normalize(x) * (1.0 + sp.gamma(cond))
                                     + conv_with(sp.beta, g, cond)) * w).sum(),
                         sp.beta.w)
        assert rep.passed, rep


def conv_with(conv_module, weights, x):
    from pat.tensor import conv2d
    return conv2d(x, weights, bias=conv_module.b, stride=conv_module.stride,
                  padding=conv_module.padding)


class TestDecoderSchedule:
    def test_final_extent_is_early_extent(self):
        cfg = micro_cfg()
        model = PatModel(cfg)
        out = model.forward(Tensor(make_rng(0).random((3, 16, 16))))
        assert out.decode.decoded.shape == (16, 8, 8)  # early = 4x base(2)
        assert out.decode.recon.shape == (3, 16, 16)
        assert out.decode.seg.mask_logits.shape == (cfg.n_global, 8, 8)

    def test_fpn_ablation_late_only(self):
        cfg = micro_cfg(fpn_stages=("late",))
        model = PatModel(cfg)
        sink = []
        with trace_ops(sink):
            model.forward(Tensor(make_rng(0).random((3, 16, 16))))
        by_scope = {}
        for sc, op in sink:
            by_scope.setdefault(sc, []).append(op)
        assert "conv2d" in by_scope.get("decode/late", [])       # SPADE applied
        assert "conv2d" not in by_scope.get("decode/mid", [])    # skipped
        assert "conv2d" not in by_scope.get("decode/early", [])  # skipped
        assert "bilinear_upsample" in by_scope.get("decode/mid", [])  # path intact

    def test_mid_condition_perturbation_propagates(self):
        cfg = micro_cfg()
        model = PatModel(cfg)
        # zero-initialized condition convs make SPADE ignore z_q at init;
        # randomize them so the probe reflects a trained decoder
        for sp in model.decoder.trunk.spades:
            sp.gamma.w.data[:] = make_rng(1).standard_normal(sp.gamma.w.shape) * 0.1
            sp.beta.w.data[:] = make_rng(2).standard_normal(sp.beta.w.shape) * 0.1
        img = Tensor(make_rng(0).random((3, 16, 16)))
        po = model.pipeline(img, model.encoder(img))
        zq = {n: po.states[n].z_q for n in STAGES}
        a, _ = model.decoder.trunk(po.z_latent, zq, po.e_global)
        zq2 = dict(zq)
        zq2["mid"] = zq["mid"] + Tensor(0.35 * np.ones(zq["mid"].shape))
        b, _ = model.decoder.trunk(po.z_latent, zq2, po.e_global)
        assert not np.allclose(a.data, b.data)

    def test_reconstruction_deterministic(self):
        cfg = micro_cfg()
        model = PatModel(cfg)
        img = Tensor(make_rng(0).random((3, 16, 16)))
        a = model.forward(img).decode.recon.data
        b = model.forward(img).decode.recon.data
        assert np.array_equal(a, b)


class TestMaskHead:
    def test_query_count_contract(self):
        cfg = micro_cfg()
        head = MaskHead(cfg, make_rng(0))
        seg = head(randt(16, 4, 4), randt(cfg.n_global, 16))
        assert seg.mask_logits.shape == (cfg.n_global, 4, 4)
        assert seg.class_logits.shape == (cfg.n_global, cfg.num_classes + 1)

    def test_orthogonal_projections_zero_logits(self):
        cfg = micro_cfg()
        head = MaskHead(cfg, make_rng(0))
        # queries project into the first half of mask space, features into
        # the second half: the product must vanish identically
        head.proj_q.layers[1].w.data[:, cfg.mask_dim // 2:] = 0.0
        head.proj_q.layers[1].b.data[cfg.mask_dim // 2:] = 0.0
        head.proj_z.w.data[: cfg.mask_dim // 2] = 0.0
        head.proj_z.b.data[: cfg.mask_dim // 2] = 0.0
        seg = head(randt(16, 4, 4), randt(cfg.n_global, 16))
        assert np.allclose(seg.mask_logits.data, 0.0)

    def test_hand_built_label_map_recovery(self):
        # one-hot classes, binary masks: argmax of sum_q p_q(k) sigmoid(m_q)
        # recovers the intended map
        k = 3
        gt = np.array([[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 2, 2], [0, 0, 2, 2]])
        masks = np.full((3, 4, 4), -20.0)
        cls = np.full((3, k + 1), -20.0)
        for q, c in enumerate([0, 1, 2]):
            masks[q][gt == c] = 20.0
            cls[q, c] = 20.0
        seg = SegOutput(Tensor(masks), Tensor(cls))
        label = derive_label_map(seg, (4, 4), k)
        assert np.array_equal(label, gt)

    def test_text_embedding_classifier(self):
        cfg = micro_cfg()
        emb = make_rng(9).standard_normal((cfg.num_classes, 10))
        head = MaskHead(cfg, make_rng(0), class_embeddings=emb)
        seg = head(randt(16, 4, 4), randt(cfg.n_global, 16))
        assert seg.class_logits.shape == (cfg.n_global, cfg.num_classes + 1)
        # cosine scores are bounded by the logit scale
        assert np.abs(seg.class_logits.data).max() <= head.logit_scale + 1e-9

    def test_text_embedding_count_mismatch(self):
        cfg = micro_cfg()
        with pytest.raises(ConfigError):
            MaskHead(cfg, make_rng(0),
                     class_embeddings=np.zeros((cfg.num_classes + 2, 10)))


class TestSeparateDecoding:
    def loss_grads(self, cfg, which):
        model = PatModel(cfg)
        img = Tensor(make_rng(0).random((3, 16, 16)))
        gt = make_rng(5).integers(0, cfg.num_classes, size=(16, 16))
        from pat.losses import recon_losses, seg_loss
        out = model.forward(img)
        if which == "seg":
            from pat.tensor import bilinear_upsample
            masks = bilinear_upsample(out.decode.seg.mask_logits, 2)
            terms, _ = seg_loss(masks, out.decode.seg.class_logits, gt,
                                cfg.num_classes, exclude_background=False)
            loss = terms["mask_bce"] + terms["mask_dice"] + terms["class_ce"]
        else:
            l1, l2, perc = recon_losses(out.decode.recon, img, model.perceptual)
            loss = l1 + l2 + perc
        model.zero_grad()
        loss.backward()
        return model

    @staticmethod
    def grad_norm(module):
        return sum(float(np.abs(p.grad).sum()) for _, p in module.named_parameters()
                   if p.grad is not None)

    def test_gradient_isolation_with_separate_stacks(self):
        cfg = micro_cfg(separate_decoding=True)
        model = self.loss_grads(cfg, "seg")
        assert self.grad_norm(model.decoder.trunk) == 0.0
        assert self.grad_norm(model.decoder.recon_head) == 0.0
        assert self.grad_norm(model.decoder.trunk_seg) > 0.0

        model = self.loss_grads(cfg, "recon")
        assert self.grad_norm(model.decoder.trunk_seg) == 0.0
        assert self.grad_norm(model.decoder.mask_head) == 0.0
        assert self.grad_norm(model.decoder.trunk) > 0.0

    def test_shared_stack_sees_both_losses(self):
        cfg = micro_cfg()
        model = self.loss_grads(cfg, "seg")
        assert self.grad_norm(model.decoder.trunk) > 0.0
        model = self.loss_grads(cfg, "recon")
        assert self.grad_norm(model.decoder.trunk) > 0.0
