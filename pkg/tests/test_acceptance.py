"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`. The two training-backed
criteria train the toy preset from scratch (deterministic per config and
seed); finished runs are cached under PAT_ACCEPT_DIR (default
/tmp/pat-acceptance) keyed by the config hash, set PAT_ACCEPT_FRESH=1 to
force retraining. Budget on a 2-core CPU: about 50 minutes end to end.
"""

import dataclasses
import hashlib
import itertools
import json
import os
import shutil
import subprocess
import time
from pathlib import Path

import numpy as np
import pytest

from pat.config import RunConfig
from pat.data import generate_dataset
from pat.encoder import pyramid_from_fpt1
from pat.evaluate import evaluate_model
from pat.feature_io import (
    NotFPT1Error,
    TruncatedFileError,
    UnsupportedDtypeError,
    load_manifest,
    read_fpt1,
    read_fpt1_file,
    write_fpt1,
)
from pat.gradcheck import grad_check
from pat.losses import crf_loss, seg_loss, tv_loss, weighted_total
from pat.matching import hungarian
from pat.metrics import miou
from pat.model import PatModel
from pat.nn import TransformerBlock
from pat.decoder import SpadeBlock
from pat.pipeline import TokenMixer
from pat.quantize import Codebook, attn, freeze_quantizers, hs_attn, vmf_vq, vq
from pat.rng import make_rng
from pat.tensor import (
    Tensor,
    avg_pool,
    bilinear_upsample,
    conv2d,
    l2_normalize,
    layer_norm,
    matmul,
    softmax,
    take_rows,
    transposed_conv2d,
)
from pat.train import load_run, train_run

ACCEPT_DIR = Path(os.environ.get("PAT_ACCEPT_DIR", "/tmp/pat-acceptance"))
FRESH = os.environ.get("PAT_ACCEPT_FRESH", "") == "1"

# frozen after the one calibration pilot (target 20 dB; pilot exceeded it)
TOY_PSNR_DB = 20.0
TOY_MIOU = 0.33
TOY_BUDGET_SECONDS = 3600.0

ABLATION_SEEDS = [201, 202, 203, 204, 205]


def report(name, ok, detail=""):
    line = f"[ACCEPTANCE] {'PASS' if ok else 'FAIL'} — {name}"
    if detail:
        line += f" ({detail})"
    print(line, flush=True)
    assert ok, line


# -- shared training fixtures ---------------------------------------------------


def _dataset(tag, n, seed):
    out = ACCEPT_DIR / "data" / tag
    manifest = out / "manifest.tsv"
    if not manifest.exists():
        generate_dataset(str(out), n, 64, 6, seed=seed)
    return str(manifest)


def _cached_run(cfg, train_manifest, tag):
    key = hashlib.sha1(cfg.to_json().encode()).hexdigest()[:12]
    out = ACCEPT_DIR / "runs" / f"{tag}-{key}"
    stamp = out / "elapsed.json"
    if FRESH and out.exists():
        shutil.rmtree(out)
    if not (stamp.exists() and (out / "checkpoint.fpt1").exists()):
        t0 = time.time()
        train_run(cfg, train_manifest, str(out))
        stamp.write_text(json.dumps({"seconds": time.time() - t0}))
    return out, json.loads(stamp.read_text())["seconds"]


@pytest.fixture(scope="module")
def toy_train_manifest():
    return _dataset("train", 500, seed=11)


@pytest.fixture(scope="module")
def toy_eval_manifest():
    return _dataset("eval", 100, seed=12)


@pytest.fixture(scope="module")
def toy_run(toy_train_manifest):
    cfg = RunConfig(steps=2000, seed=0, log_every=10, eval_every=0).validate()
    return _cached_run(cfg, toy_train_manifest, "toy")


def micro_cfg(**kw):
    base = dict(image_size=16, num_classes=4, d_enc=8, d_side=12, side_layers=4,
                codebook_sizes=(6, 5, 4, 8), n_global=4, decoder_width=16,
                mask_dim=8, token_mixer_hidden=8, seed=3)
    base.update(kw)
    return RunConfig(**base).validate()


# -- criteria ---------------------------------------------------------------------


class TestOracleEquivalence:
    def test_vq_matches_exhaustive_search(self):
        # 1000 random instances against an explicit code-by-code search
        r = make_rng(20240)
        t0 = time.time()
        checked = 0
        for trial in range(1000):
            c = int(r.integers(2, 17))
            n = int(r.integers(1, 257))
            d = int(r.integers(2, 9))
            cb = Codebook(c, d, stage="a", rng=make_rng(trial))
            feats = r.standard_normal((n, d))
            _, assign = vq(cb, Tensor(feats))
            # oracle: enumerate codes with a running max, ties to lowest index
            best_score = np.full(n, -np.inf)
            best_idx = np.zeros(n, dtype=np.int64)
            for j in range(c):
                s = feats @ cb.tokens.data[j]
                better = s > best_score
                best_score[better] = s[better]
                best_idx[better] = j
            assert np.array_equal(assign.indices, best_idx), f"trial {trial}"
            checked += n
        elapsed = time.time() - t0
        report("oracle equivalence — VQ", elapsed < 5.0,
               f"1000 instances, {checked} features, {elapsed:.2f}s")

    def test_hungarian_matches_permutation_search(self):
        r = make_rng(777)
        t0 = time.time()
        for trial in range(100):
            cost = r.standard_normal((7, 7)) * 4.0
            m = hungarian(cost)
            best = min(sum(cost[i, p] for i, p in enumerate(perm))
                       for perm in itertools.permutations(range(7)))
            assert m.total_cost == pytest.approx(best, abs=1e-9), f"trial {trial}"
        report("oracle equivalence — Hungarian", True,
               f"100 trials x 5040 permutations, {time.time() - t0:.2f}s")


class TestHsAttnLimits:
    def test_kappa_limits(self):
        r = make_rng(31)
        q = Tensor(r.standard_normal((6, 8)))
        k = Tensor(r.standard_normal((12, 8)))
        out0 = hs_attn(q, k, k, kappa=0.0)
        mean = k.data.mean(axis=0)
        mean /= np.linalg.norm(mean)
        err0 = np.abs(out0.data - mean).max()

        feats = np.eye(8)
        kt = Tensor(feats)
        qt = Tensor(np.roll(feats, 1, axis=0) * 0.8 + feats * 0.2)
        out_inf = hs_attn(qt, kt, kt, kappa=1e4)
        sims = l2_normalize(qt, axis=-1).data @ feats.T
        nearest = feats[np.argmax(sims, axis=1)]
        err_inf = np.abs(out_inf.data - nearest).max()
        report("HSAttn limits", err0 <= 1e-9 and err_inf <= 1e-6,
               f"kappa=0 err {err0:.2e} <= 1e-9, kappa=1e4 err {err_inf:.2e} <= 1e-6")


class TestGradientSuite:
    def test_every_op_and_one_full_loss(self):
        t0 = time.time()
        r = make_rng(55)

        def t(*shape):
            return Tensor(r.standard_normal(shape))

        w34 = Tensor(r.standard_normal((3, 4)))
        w244 = Tensor(r.standard_normal((2, 4, 4)))
        w288 = Tensor(r.standard_normal((2, 8, 8)))
        w188 = Tensor(r.standard_normal((1, 8, 8)))
        w222 = Tensor(r.standard_normal((2, 2, 2)))
        wconv = t(2, 1, 3, 3)
        wtconv = t(1, 2, 4, 4)
        gamma, beta = t(6), t(6)
        idx = [1, 0, 2, 1]
        cases = [
            ("matmul", lambda x: (matmul(x, _fix("mm", 4, 5)) * _fix("mmw", 3, 5)).sum(),
             t(3, 4)),
            ("softmax", lambda x: (softmax(x, axis=-1) * w34).sum(), t(3, 4)),
            ("l2_normalize", lambda x: (l2_normalize(x, axis=-1) * w34).sum(), t(3, 4)),
            ("add", lambda x: (x + _fix("a", 3, 4)).sum(), t(3, 4)),
            ("sub", lambda x: (x - _fix("s", 3, 4)).sum(), t(3, 4)),
            ("mul", lambda x: (x * _fix("m", 3, 4)).sum(), t(3, 4)),
            ("div", lambda x: (x / (_fix("d", 3, 4) * 0.1 + 3.0)).sum(), t(3, 4)),
            ("scale", lambda x: (x * 2.5).sum(), t(3, 4)),
            ("pow", lambda x: ((x * x + 1.0) ** 1.5).sum(), t(3, 4)),
            ("relu", lambda x: x.relu().sum(), t(3, 4)),
            ("gelu", lambda x: x.gelu().sum(), t(3, 4)),
            ("exp", lambda x: x.exp().sum(), t(3, 4)),
            ("log", lambda x: (x * x + 1.0).log().sum(), t(3, 4)),
            ("sqrt", lambda x: (x * x + 0.5).sqrt().sum(), t(3, 4)),
            ("abs", lambda x: x.abs().sum(), t(3, 4) + 5.0),
            ("sigmoid", lambda x: x.sigmoid().sum(), t(3, 4)),
            ("tanh", lambda x: x.tanh().sum(), t(3, 4)),
            ("clamp", lambda x: x.clamp(-0.4, 0.4).sum(), t(3, 4)),
            ("sum/mean", lambda x: (x.sum(axis=0) * _fix("sm", 4)).mean(), t(3, 4)),
            ("reshape/transpose", lambda x: (x.reshape(4, 3).T * _fix("rt", 3, 4)).sum(),
             t(3, 4)),
            ("slice", lambda x: (x[:, 1:] * _fix("sl", 3, 3)).sum(), t(3, 4)),
            ("take_rows", lambda x: (take_rows(x, idx) * _fix("tr", 4, 4)).sum(), t(3, 4)),
            ("conv2d", lambda x: (conv2d(x, wconv, stride=1, padding=1) * w244).sum(),
             t(1, 4, 4)),
            ("conv2d_w", lambda w: (conv2d(_fix("ci", 1, 4, 4), w, stride=1, padding=1)
                                    * w244).sum(), t(2, 1, 3, 3)),
            ("transposed_conv2d", lambda x: (transposed_conv2d(x, wtconv, stride=2,
                                                               padding=1) * w288).sum(),
             t(1, 4, 4)),
            ("avg_pool", lambda x: (avg_pool(x, 2) * w222).sum(), t(2, 4, 4)),
            ("bilinear_upsample", lambda x: (bilinear_upsample(x, 2) * w188).sum(),
             t(1, 4, 4)),
            ("layer_norm", lambda x: (layer_norm(x, gamma, beta) * _fix("ln", 3, 6)).sum(),
             t(3, 6)),
            ("attn", lambda q: (attn(q, _fix("ak", 5, 4), _fix("av", 5, 4))
                                * _fix("aw", 3, 4)).sum(), t(3, 4)),
            ("hs_attn", lambda q: (hs_attn(q, _fix("hk", 5, 4), _fix("hv", 5, 4), 7.0)
                                   * _fix("hw", 3, 4)).sum(), t(3, 4)),
            ("tv_loss", lambda z: tv_loss(z), t(3, 4, 4)),
            ("crf_loss", lambda z: crf_loss(z, _fix_img()), t(3, 3, 3)),
        ]
        worst = {}
        for name, fn, x in cases:
            rep = grad_check(fn, x)
            worst[name] = rep.max_rel_err
            assert rep.passed, f"{name}: {rep}"

        modules = self._module_cases(r)
        for name, fn, x in modules:
            rep = grad_check(fn, x)
            worst[name] = rep.max_rel_err
            assert rep.passed, f"{name}: {rep}"

        e2e_err = self._end_to_end_check()
        worst["end_to_end_toy_loss"] = e2e_err
        elapsed = time.time() - t0
        report("gradient suite", elapsed < 120.0 and max(worst.values()) <= 1e-4,
               f"{len(worst)} checks, worst rel err {max(worst.values()):.2e}, "
               f"{elapsed:.1f}s < 120s")

    def _module_cases(self, r):
        blk = TransformerBlock(6, make_rng(1), mlp_ratio=2)
        mix = TokenMixer(3, 4, 2, 3, make_rng(2), hidden=4)
        sp = SpadeBlock(3, 2, make_rng(3))
        sp.gamma.w.data[:] = make_rng(4).standard_normal(sp.gamma.w.shape) * 0.2
        sp.beta.w.data[:] = make_rng(5).standard_normal(sp.beta.w.shape) * 0.2
        cond = Tensor(r.standard_normal((2, 3, 3)))
        gt = make_rng(6).integers(0, 3, size=(4, 4))
        cls = Tensor(make_rng(7).standard_normal((3, 4)))
        return [
            ("transformer_block", lambda x: (blk(x) * _fix("tb", 5, 6)).sum(),
             Tensor(r.standard_normal((5, 6)))),
            ("token_mixer", lambda x: (mix(x) * _fix("tm", 4, 3)).sum(),
             Tensor(r.standard_normal((3, 2)))),
            ("spade", lambda x: (sp(x, cond) * _fix("sp", 3, 3, 3)).sum(),
             Tensor(r.standard_normal((3, 3, 3)))),
            ("seg_loss", lambda m: _seg_sum(m, cls, gt),
             Tensor(make_rng(8).standard_normal((3, 4, 4)))),
        ]

    def _end_to_end_check(self):
        cfg = micro_cfg(codebook_sizes=(2, 2, 2, 4), kappa=5.0)
        model = PatModel(cfg)
        img = Tensor(make_rng(0).random((3, 16, 16)))
        gt = make_rng(5).integers(0, cfg.num_classes, size=(16, 16))
        cb = model.pipeline.stages[1].codebook
        with freeze_quantizers() as fz:
            model.loss(img, gt)
            fz.replay()

            def f(tokens):
                fz.rewind()
                old = cb.tokens
                cb.tokens = tokens
                try:
                    total, _, _ = model.loss(img, gt)
                finally:
                    cb.tokens = old
                return total

            rep = grad_check(f, cb.tokens, tol=1e-4)
        assert rep.passed, f"end-to-end: {rep}"
        return rep.max_rel_err


_fix_cache = {}


def _fix(tag, *shape):
    if tag not in _fix_cache:
        _fix_cache[tag] = Tensor(make_rng(hash(tag) % 2**32).standard_normal(shape))
    return _fix_cache[tag]


def _fix_img():
    if "img" not in _fix_cache:
        _fix_cache["img"] = Tensor(make_rng(99).random((3, 3, 3)))
    return _fix_cache["img"]


def _seg_sum(masks, cls, gt):
    terms, _ = seg_loss(masks, cls, gt, 3)
    return terms["mask_bce"] + terms["mask_dice"] + terms["class_ce"]


class TestDecoupling:
    def test_global_token_perturbations(self):
        cfg = micro_cfg()
        model = PatModel(cfg)
        img = Tensor(make_rng(0).random((3, 16, 16)))
        ref = model.forward(img)
        eg = model.pipeline.e_global
        baseline = eg.data.copy()
        ok = True
        for scale in (1e-3, 1.0, 1e3):
            eg.data[:] = baseline + make_rng(int(scale * 7) % 100).standard_normal(
                eg.shape) * scale
            per = model.forward(img)
            for name in ("early", "mid", "late"):
                a, b = ref.pipeline.states[name], per.pipeline.states[name]
                ok &= np.array_equal(a.x.data, b.x.data)
                ok &= np.array_equal(a.z_q.data, b.z_q.data)
                ok &= np.array_equal(a.e_local.data, b.e_local.data)
            ok &= np.array_equal(ref.pipeline.z_latent.data, per.pipeline.z_latent.data)
        eg.data[:] = baseline
        report("decoupling invariant", ok,
               "x, local tokens, z_q bit-identical under e_global perturbations")


class TestHandValues:
    def test_miou_hand_case(self):
        gt = np.array([[0, 0], [1, 1]])
        pred = np.array([[0, 1], [1, 1]])
        value = miou(pred, gt, 2)
        report("mIoU hand case", abs(value - 7 / 12) < 1e-12, f"{value} == 7/12")

    def test_loss_weighting(self):
        total = weighted_total(Tensor(2.0), Tensor(3.0), Tensor(5.0), Tensor(7.0)).item()
        report("loss weighting", abs(total - 12.5) < 1e-9, f"groups (2,3,5,7) -> {total}")


class TestToyEndToEnd:
    def test_toy_training_run(self, toy_run, toy_train_manifest):
        out_dir, seconds = toy_run
        rows = [l.split(",") for l in
                (out_dir / "metrics.csv").read_text().strip().splitlines()[1:]]
        totals = [(int(s), float(v)) for s, term, v in rows if term == "total"]

        def smoothed(at):
            window = [v for s, v in totals if at - 100 < s <= at]
            return float(np.mean(window))

        s100, s2000 = smoothed(100), smoothed(2000)
        _, model = load_run(str(out_dir))
        train_rep = evaluate_model(model, load_manifest(toy_train_manifest), limit=100)
        ok = (s2000 < s100 and train_rep.miou >= TOY_MIOU
              and train_rep.mean_psnr >= TOY_PSNR_DB and seconds <= TOY_BUDGET_SECONDS)
        report("toy end-to-end", ok,
               f"loss {s100:.3f} -> {s2000:.3f}; train mIoU {train_rep.miou:.3f} "
               f">= {TOY_MIOU}; PSNR {train_rep.mean_psnr:.2f} dB >= {TOY_PSNR_DB}; "
               f"{seconds / 60:.1f} min <= 60")


class TestAblationDirection:
    def test_no_vmf_does_not_beat_baseline(self, toy_train_manifest, toy_eval_manifest):
        scores = {False: [], True: []}
        for flag in (False, True):
            for seed in ABLATION_SEEDS:
                cfg = RunConfig(steps=300, batch_size=1, seed=seed, log_every=50,
                                eval_every=0, no_vmf=flag).validate()
                out_dir, _ = _cached_run(cfg, toy_train_manifest,
                                         f"abl-{'novmf' if flag else 'base'}-{seed}")
                _, model = load_run(str(out_dir))
                rep = evaluate_model(model, load_manifest(toy_eval_manifest), limit=60)
                scores[flag].append(rep.miou)
        base = float(np.mean(scores[False]))
        ablated = float(np.mean(scores[True]))
        report("ablation direction (no vMF meanshift)", ablated <= base,
               f"5-seed mean mIoU: no_vmf {ablated:.3f} <= baseline {base:.3f}")


class TestFpt1Acceptance:
    GOLDEN = (b"FPT1" + b"\x01\x00" + b"\x01\x00\x00\x00" + b"\x01\x00" + b"x"
              + b"\x00" + b"\x01" + b"\x01" + b"\x00" * 7 + b"\x00\x00\x80\x3f")

    def test_container_contract(self):
        r = make_rng(606)
        ok = True
        for trial in range(50):
            tensors = {}
            for i in range(int(r.integers(0, 5))):
                rank = int(r.integers(0, 5))
                shape = tuple(int(r.integers(1, 5)) for _ in range(rank))
                tensors[f"t{i}"] = r.standard_normal(shape).astype(
                    [np.float32, np.float64][int(r.integers(0, 2))])
            back = read_fpt1(write_fpt1(tensors))
            ok &= set(back) == set(tensors)
            ok &= all(np.array_equal(back[k], v) and back[k].dtype == v.dtype
                      for k, v in tensors.items())

        golden_ok = write_fpt1({"x": np.array([1.0], np.float32)}) == self.GOLDEN

        errors_ok = True
        try:
            read_fpt1(b"FPTX" + self.GOLDEN[4:])
            errors_ok = False
        except NotFPT1Error:
            pass
        try:
            read_fpt1(self.GOLDEN[:-3])
            errors_ok = False
        except TruncatedFileError:
            pass
        corrupt = bytearray(self.GOLDEN)
        corrupt[13] = 7
        try:
            read_fpt1(bytes(corrupt))
            errors_ok = False
        except UnsupportedDtypeError:
            pass
        report("FPT1 container", ok and golden_ok and errors_ok,
               "roundtrip identity, golden bytes, all three error classes")


EXPORTER_CLI = Path(__file__).resolve().parent.parent / "exporter" / "dist" / "cli.js"


@pytest.mark.skipif(not (EXPORTER_CLI.exists() and shutil.which("node")),
                    reason="secondary exporter not built; primary suite is complete without it")
class TestSecondaryFixtures:
    def test_exported_files_load_through_primary_reader(self, tmp_path):
        data_dir = tmp_path / "d"
        generate_dataset(str(data_dir), 2, 64, 6, seed=42)
        feats_dir = tmp_path / "features"
        subprocess.run(
            ["node", str(EXPORTER_CLI), "export-features",
             "--manifest", str(data_dir / "manifest.tsv"),
             "--out-dir", str(feats_dir), "--model", "mock:7"],
            check=True, capture_output=True)
        manifest = load_manifest(str(feats_dir / "manifest.tsv"))
        pyr = pyramid_from_fpt1(manifest.resolve(manifest.samples[0].feature_path))
        shapes_ok = (pyr.early.shape == (32, 16, 16) and pyr.mid.shape == (32, 8, 8)
                     and pyr.late.shape == (32, 4, 4) and pyr.latent.shape == (32, 4, 4))

        text_path = tmp_path / "text.fpt1"
        subprocess.run(
            ["node", str(EXPORTER_CLI), "export-text",
             "--manifest", str(data_dir / "manifest.tsv"),
             "--model", "mock:7", "--out", str(text_path)],
            check=True, capture_output=True)
        emb = read_fpt1_file(str(text_path))["text_embeddings"]
        norms = np.linalg.norm(emb.astype(np.float64), axis=1)
        text_ok = emb.shape[0] == 6 and np.abs(norms - 1.0).max() < 1e-6
        report("secondary exporter fixtures", shapes_ok and text_ok,
               f"pyramid {pyr.early.shape}/{pyr.late.shape}, "
               f"embeddings {emb.shape} unit-norm")
