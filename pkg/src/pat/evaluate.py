"""Dataset evaluation: aggregate per-class IoU, mIoU and reconstruction PSNR."""

import csv
from dataclasses import dataclass

import numpy as np

from .data import ShapeDataset
from .encoder import pyramid_from_fpt1
from .errors import DataError
from .metrics import IGNORE_LABEL, psnr
from .tensor import no_grad

__all__ = ["EvalReport", "evaluate_model", "write_eval_csv"]


@dataclass
class EvalReport:
    miou: float
    per_class_iou: dict
    mean_psnr: float
    n_images: int
    class_names: dict


def evaluate_model(model, manifest, limit=None, collect_maps=False):
    """Aggregate IoU counts and PSNR over (a prefix of) a manifest.

    Per-class IoU uses dataset-level intersection/union sums; mIoU averages
    over the classes that occur in any ground truth map.
    """
    cfg = model.cfg
    if manifest.num_classes != cfg.num_classes:
        raise DataError(f"manifest has {manifest.num_classes} classes, "
                        f"model expects {cfg.num_classes}")
    data = ShapeDataset(manifest, cache=False)
    n = len(data) if limit is None else min(limit, len(data))
    k = cfg.num_classes
    inter = np.zeros(k)
    union = np.zeros(k)
    gt_seen = np.zeros(k, dtype=bool)
    psnrs = []
    maps = []
    for i in range(n):
        image, gt, feature_path = data.get(i)
        pyramid = None
        if cfg.feature_source == "fpt1":
            if not feature_path:
                raise DataError(f"sample {i} lacks a feature file but "
                                "feature_source is 'fpt1'")
            pyramid = pyramid_from_fpt1(manifest.resolve(feature_path))
        with no_grad():
            out = model.forward(image, pyramid)
            pred = model.label_map(out, gt.shape)
            recon = np.clip(out.decode.recon.data, 0.0, 1.0)
        psnrs.append(psnr(recon, image.data))
        valid = gt != IGNORE_LABEL
        for c in np.unique(np.concatenate([gt[valid], pred[valid]])):
            pc = (pred == c) & valid
            gc = (gt == c) & valid
            inter[c] += np.logical_and(pc, gc).sum()
            union[c] += np.logical_or(pc, gc).sum()
            if gc.any():
                gt_seen[c] = True
        if collect_maps:
            maps.append(pred)
    per_class = {}
    for c in range(k):
        if gt_seen[c]:
            per_class[c] = float(inter[c] / union[c]) if union[c] else 0.0
    miou_value = float(np.mean(list(per_class.values()))) if per_class else float("nan")
    report = EvalReport(miou=miou_value, per_class_iou=per_class,
                        mean_psnr=float(np.mean(psnrs)) if psnrs else float("nan"),
                        n_images=n, class_names=dict(manifest.classes))
    return (report, maps) if collect_maps else report


def write_eval_csv(report, path):
    """One row per class plus summary rows; plot-ready."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["kind", "key", "value"])
        for c in sorted(report.class_names):
            iou = report.per_class_iou.get(c, float("nan"))
            w.writerow(["class_iou", f"{c}:{report.class_names[c]}", f"{iou:.6f}"])
        w.writerow(["summary", "miou", f"{report.miou:.6f}"])
        w.writerow(["summary", "mean_psnr", f"{report.mean_psnr:.4f}"])
        w.writerow(["summary", "n_images", str(report.n_images)])
