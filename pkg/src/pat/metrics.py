"""Evaluation metrics: class-wise mean IoU and reconstruction PSNR."""

import numpy as np

__all__ = ["IGNORE_LABEL", "per_class_iou", "miou", "psnr", "PSNR_CAP_DB"]

IGNORE_LABEL = 255
PSNR_CAP_DB = 99.0


def _check_maps(pred, gt, num_classes):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"label map shapes differ: {pred.shape} vs {gt.shape}")
    valid = gt != IGNORE_LABEL
    for name, arr in (("pred", pred[valid]), ("gt", gt[valid])):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"{name} labels outside [0, {num_classes})")
    return pred, gt, valid


def per_class_iou(pred, gt, num_classes):
    """Intersection-over-union per class; NaN for classes absent from gt.

    Pixels labelled IGNORE_LABEL in gt are excluded entirely.
    """
    pred, gt, valid = _check_maps(pred, gt, num_classes)
    ious = np.full(num_classes, np.nan)
    p = pred[valid]
    g = gt[valid]
    for c in range(num_classes):
        gt_c = g == c
        if not gt_c.any():
            continue
        pred_c = p == c
        inter = np.logical_and(gt_c, pred_c).sum()
        union = np.logical_or(gt_c, pred_c).sum()
        ious[c] = inter / union
    return ious


def miou(pred, gt, num_classes):
    """Mean IoU over the classes present in gt."""
    ious = per_class_iou(pred, gt, num_classes)
    present = ~np.isnan(ious)
    if not present.any():
        return float("nan")
    return float(ious[present].mean())


def psnr(pred, target):
    """10*log10(1/MSE) for [0,1]-valued images, capped at 99 dB near-zero MSE."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"image shapes differ: {pred.shape} vs {target.shape}")
    mse = float(((pred - target) ** 2).mean())
    if mse < 1e-10:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)
