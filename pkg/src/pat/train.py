"""Serialized training loop: forward, weighted loss, backward, AdamW update.

A run directory collects everything reproducible about the run: the
resolved config, an append-only metrics CSV of (step, term, value) rows,
and the final checkpoint (all parameters including the frozen stubs, plus
optimizer slots). (config, seed) determines every logged value.
"""

import dataclasses
import json
import os

import numpy as np

from .config import RunConfig
from .data import ShapeDataset
from .encoder import pyramid_from_fpt1
from .errors import DataError, DivergenceError
from .evaluate import evaluate_model
from .feature_io import load_checkpoint, load_manifest, read_fpt1_file, save_checkpoint
from .model import PatModel
from .optim import AdamW
from .quantize import codebook_stats
from .rng import spawn

__all__ = ["TrainResult", "train_run", "run_seeds", "build_model", "load_run"]


@dataclasses.dataclass
class TrainResult:
    out_dir: str
    checkpoint_path: str
    metrics_path: str
    final_report: dict
    final_eval: object = None


class MetricsLog:
    def __init__(self, path):
        self.path = path
        fresh = not os.path.exists(path)
        self.f = open(path, "a", encoding="utf-8")
        if fresh:
            self.f.write("step,term,value\n")

    def write(self, step, terms):
        for k, v in terms.items():
            self.f.write(f"{step},{k},{v:.10g}\n")
        self.f.flush()

    def close(self):
        self.f.close()


def build_model(cfg):
    embeddings = None
    if cfg.class_embed_path:
        tensors = read_fpt1_file(cfg.class_embed_path)
        if "text_embeddings" not in tensors:
            raise DataError(f"{cfg.class_embed_path} lacks a 'text_embeddings' tensor")
        embeddings = np.asarray(tensors["text_embeddings"], dtype=np.float64)
    return PatModel(cfg, class_embeddings=embeddings)


def _divergence_snapshot(out_dir, step, report, model):
    norms = {n: float(np.abs(p.data).max()) for n, p in model.trainable_parameters()}
    worst = sorted(norms.items(), key=lambda kv: -kv[1])[:10]
    snap = {"step": step, "report": report, "largest_parameters": dict(worst)}
    path = os.path.join(out_dir, "divergence.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(snap, f, indent=2)
    return path


def train_run(cfg, manifest_path, out_dir, eval_manifest_path=None, resume=None,
              log=None):
    """Train per `cfg` on a dataset manifest; returns a TrainResult."""
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as f:
        f.write(cfg.to_json())

    manifest = load_manifest(manifest_path)
    if manifest.num_classes != cfg.num_classes:
        raise DataError(f"manifest has {manifest.num_classes} classes, "
                        f"config says {cfg.num_classes}")
    data = ShapeDataset(manifest)
    eval_manifest = load_manifest(eval_manifest_path) if eval_manifest_path else None

    model = build_model(cfg)
    opt = AdamW(model.trainable_parameters(), lr=cfg.lr,
                weight_decay=cfg.weight_decay, beta1=cfg.beta1, beta2=cfg.beta2)
    if resume:
        params, opt_state = load_checkpoint(resume,
                                            expected_params=model.parameter_shapes())
        model.load_state(params)
        opt.load_state(opt_state)

    metrics_path = os.path.join(out_dir, "metrics.csv")
    logger = MetricsLog(metrics_path)
    order = spawn(cfg.seed, "batch_order")
    last_report = {}
    last_out = None
    ablations = {k: getattr(cfg, k) for k in
                 ("no_vmf", "no_spatial_align", "no_tokenmixer", "no_pixel_residual",
                  "unified_tokens", "separate_decoding")}
    logger.write(0, {f"flag_{k}": float(v) for k, v in ablations.items()})

    def diverged(step, why):
        snap = _divergence_snapshot(out_dir, step, last_report, model)
        logger.close()
        return DivergenceError(f"{why} at step {step}; snapshot: {snap}")

    for step in range(1, cfg.steps + 1):
        idxs = order.integers(0, len(data), size=cfg.batch_size)
        batch_total = None
        term_sums = {}
        try:
            for i in idxs:
                image, gt, feature_path = data.get(int(i))
                pyramid = None
                if cfg.feature_source == "fpt1":
                    if not feature_path:
                        raise DataError(f"sample {i} lacks a feature file but "
                                        "feature_source is 'fpt1'")
                    pyramid = pyramid_from_fpt1(manifest.resolve(feature_path))
                total, report, last_out = model.loss(image, gt, pyramid)
                batch_total = total if batch_total is None else batch_total + total
                for k, v in report.terms().items():
                    term_sums[k] = term_sums.get(k, 0.0) + v
        except ValueError as e:
            # non-finite activations surface first in shape-checked consumers
            # (e.g. the matching cost); treat them as divergence, not bad input
            if "non-finite" in str(e):
                raise diverged(step, f"non-finite values in forward ({e})") from e
            raise
        batch_total = batch_total * (1.0 / cfg.batch_size)
        last_report = {k: v / cfg.batch_size for k, v in term_sums.items()}

        if not np.isfinite(batch_total.item()):
            raise diverged(step, "non-finite loss")

        model.zero_grad()
        batch_total.backward()
        opt.step()
        if not all(np.isfinite(p.data).all() for _, p in opt.params):
            raise diverged(step, "non-finite parameters after update")

        if step % 100 == 0:
            stats = {f"util_{cb.stage}": codebook_stats(cb).utilization
                     for cb in model.pipeline.all_codebooks()}
            logger.write(step, stats)
            if cfg.restart_dead_codes and last_out is not None:
                restart_rng = spawn(cfg.seed, "restart", step)
                po = last_out.pipeline
                feats = {name: po.states[name].vq_features.data
                         for name in po.states}
                feats["latent"] = po.latent_features.data
                for cb in model.pipeline.all_codebooks():
                    cb.restart_dead_codes(feats[cb.stage], restart_rng)
            for cb in model.pipeline.all_codebooks():
                cb.reset_usage()

        if step % cfg.log_every == 0 or step == cfg.steps:
            logger.write(step, last_report)
            if log:
                log(f"step {step}: total {last_report['total']:.4f}")
        if eval_manifest and cfg.eval_every and step % cfg.eval_every == 0:
            rep = evaluate_model(model, eval_manifest, limit=16)
            logger.write(step, {"eval_miou": rep.miou, "eval_psnr": rep.mean_psnr})

    ckpt_path = os.path.join(out_dir, "checkpoint.fpt1")
    save_checkpoint(ckpt_path, dict(model.named_parameters()), opt.state_dict())

    final_eval = None
    if eval_manifest:
        final_eval = evaluate_model(model, eval_manifest)
        logger.write(cfg.steps, {"final_miou": final_eval.miou,
                                 "final_psnr": final_eval.mean_psnr})
    logger.close()
    return TrainResult(out_dir, ckpt_path, metrics_path, last_report, final_eval)


def run_seeds(cfg, manifest_path, out_dir, seeds, eval_manifest_path=None, log=None):
    """Repeat a run over several seeds for variance smoothing.

    Returns the list of TrainResults; per-seed final metrics land in
    out_dir/summary.csv."""
    results = []
    os.makedirs(out_dir, exist_ok=True)
    for seed in seeds:
        sub_cfg = dataclasses.replace(cfg, seed=int(seed))
        sub_dir = os.path.join(out_dir, f"seed{seed}")
        results.append(train_run(sub_cfg, manifest_path, sub_dir,
                                 eval_manifest_path=eval_manifest_path, log=log))
    with open(os.path.join(out_dir, "summary.csv"), "w", encoding="utf-8") as f:
        f.write("seed,final_total,final_miou,final_psnr\n")
        for seed, res in zip(seeds, results):
            miou = res.final_eval.miou if res.final_eval else float("nan")
            psnr_v = res.final_eval.mean_psnr if res.final_eval else float("nan")
            f.write(f"{seed},{res.final_report.get('total', float('nan')):.6g},"
                    f"{miou:.6g},{psnr_v:.6g}\n")
    return results


def load_run(run_dir):
    """Rebuild (cfg, model) from a run directory's config and checkpoint."""
    with open(os.path.join(run_dir, "config.json"), "r", encoding="utf-8") as f:
        cfg = RunConfig.from_dict(json.load(f))
    model = build_model(cfg)
    params, _ = load_checkpoint(os.path.join(run_dir, "checkpoint.fpt1"))
    model.load_state(params)
    return cfg, model
