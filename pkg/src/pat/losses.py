"""Training losses and their group weighting.

Four groups feed the total: VQ code/commitment terms, spatial alignment
(TV + bilateral CRF) of the mid-stage token map against the input image,
reconstruction (L1 + L2 + perceptual), and the Hungarian-matched
segmentation terms. Group weights default to 0.1 / 0.1 / 1.0 / 1.0.
"""

from dataclasses import dataclass

import numpy as np

from .matching import hungarian
from .metrics import IGNORE_LABEL
from .nn import Conv, Module
from .tensor import DimensionError, Tensor, l2_normalize, no_grad, one_hot, softmax

__all__ = [
    "LossWeights",
    "LossReport",
    "tv_loss",
    "crf_loss",
    "PerceptualExtractor",
    "recon_losses",
    "build_mask_targets",
    "seg_loss",
    "weighted_total",
    "BCE_LOGIT_CLAMP",
]

BCE_LOGIT_CLAMP = 15.0
DICE_EPS = 1.0


@dataclass
class LossWeights:
    vq: float = 0.1
    spatial: float = 0.1
    recon: float = 1.0
    seg: float = 1.0


@dataclass
class LossReport:
    """Per-term scalars, group sums and the weighted total of one step."""

    vq: float = 0.0
    tv: float = 0.0
    crf: float = 0.0
    l1: float = 0.0
    l2: float = 0.0
    perceptual: float = 0.0
    mask_bce: float = 0.0
    mask_dice: float = 0.0
    class_ce: float = 0.0
    vq_group: float = 0.0
    spatial_group: float = 0.0
    recon_group: float = 0.0
    seg_group: float = 0.0
    total: float = 0.0

    def terms(self):
        return {
            "vq": self.vq, "tv": self.tv, "crf": self.crf,
            "l1": self.l1, "l2": self.l2, "perceptual": self.perceptual,
            "mask_bce": self.mask_bce, "mask_dice": self.mask_dice,
            "class_ce": self.class_ce,
            "vq_group": self.vq_group, "spatial_group": self.spatial_group,
            "recon_group": self.recon_group, "seg_group": self.seg_group,
            "total": self.total,
        }


def weighted_total(vq_group, spatial_group, recon_group, seg_group, weights=None):
    """Weighted sum of the four loss groups (any group may be a float 0)."""
    w = weights or LossWeights()
    return (vq_group * w.vq + spatial_group * w.spatial
            + recon_group * w.recon + seg_group * w.seg)


def tv_loss(z_q):
    """Mean squared difference of per-position feature norms over
    horizontal + vertical neighbour pairs of a [d,H,W] map."""
    if z_q.ndim != 3:
        raise DimensionError(f"tv_loss expects [d,H,W], got {z_q.shape}")
    _, h, w = z_q.shape
    norms = (z_q * z_q).sum(axis=0).sqrt()
    total = None
    pairs = 0
    if w > 1:
        dh = norms[:, 1:] - norms[:, :-1]
        total = (dh * dh).sum()
        pairs += h * (w - 1)
    if h > 1:
        dv = norms[1:, :] - norms[:-1, :]
        sv = (dv * dv).sum()
        total = sv if total is None else total + sv
        pairs += (h - 1) * w
    if pairs == 0:
        return Tensor(0.0)
    return total * (1.0 / pairs)


def crf_loss(z_q, image, sigma=0.15):
    """Bilateral smoothness: w_ij * (1 - cos(f_i, f_j)) over 4-neighbour pairs,
    w_ij = exp(-||I_i - I_j||^2 / (2 sigma^2)).

    `image` must already be at the map resolution, values in [0,1]; it only
    supplies the pairwise weights and receives no gradient.
    """
    if z_q.ndim != 3 or image.ndim != 3:
        raise DimensionError(f"crf_loss expects [d,H,W] maps, got {z_q.shape} and {image.shape}")
    if z_q.shape[1:] != image.shape[1:]:
        raise DimensionError(
            f"crf_loss: image {image.shape} not at map resolution {z_q.shape}")
    _, h, w = z_q.shape
    fn = l2_normalize(z_q, axis=0)
    img = image.data if isinstance(image, Tensor) else np.asarray(image)
    inv = 1.0 / (2.0 * sigma * sigma)
    total = None
    pairs = 0
    if w > 1:
        # cosine clipped to [-1,1]: rounding can push aligned pairs past 1,
        # which would make the loss dip below zero
        cos_h = (fn[:, :, 1:] * fn[:, :, :-1]).sum(axis=0).clamp(-1.0, 1.0)
        wgt = np.exp(-((img[:, :, 1:] - img[:, :, :-1]) ** 2).sum(axis=0) * inv)
        total = ((1.0 - cos_h) * Tensor(wgt)).sum()
        pairs += h * (w - 1)
    if h > 1:
        cos_v = (fn[:, 1:, :] * fn[:, :-1, :]).sum(axis=0).clamp(-1.0, 1.0)
        wgt = np.exp(-((img[:, 1:, :] - img[:, :-1, :]) ** 2).sum(axis=0) * inv)
        sv = ((1.0 - cos_v) * Tensor(wgt)).sum()
        total = sv if total is None else total + sv
        pairs += (h - 1) * w
    if pairs == 0:
        return Tensor(0.0)
    return total * (1.0 / pairs)


class PerceptualExtractor(Module):
    """Fixed random conv stack standing in for a pretrained feature network.

    Weights are frozen at construction; only the seed determines them, so
    the perceptual distance is a reproducible fixed metric.
    """

    def __init__(self, rng, c_in=3):
        super().__init__()
        self.c1 = Conv(c_in, 12, 3, rng, stride=2, padding=1)
        self.c2 = Conv(12, 24, 3, rng, stride=2, padding=1)
        self.c3 = Conv(24, 24, 3, rng, stride=1, padding=1)
        for p in self.parameters():
            p.requires_grad = False

    def __call__(self, x):
        return self.c3(self.c2(self.c1(x).gelu()).gelu())


def recon_losses(pred, target, extractor):
    """(L1, L2, perceptual) distances between two images of equal shape."""
    if pred.shape != target.shape:
        raise DimensionError(f"recon_losses: {pred.shape} vs {target.shape}")
    diff = pred - target
    l1 = diff.abs().mean()
    l2 = (diff * diff).mean()
    pf = extractor(pred)
    tf = extractor(target)
    perceptual = ((pf - tf) ** 2).mean()
    return l1, l2, perceptual


# -- segmentation loss -------------------------------------------------------


def build_mask_targets(gt, num_classes, exclude_background=True):
    """Binary target masks for the classes present in a label map.

    Returns (class_ids, masks [T,H,W], valid [H,W]). Label 0 is treated as
    unannotated canvas when exclude_background is set; IGNORE_LABEL pixels
    are excluded from every mask term via `valid`.
    """
    gt = np.asarray(gt)
    valid = gt != IGNORE_LABEL
    if gt[valid].size and (gt[valid].min() < 0 or gt[valid].max() >= num_classes):
        raise ValueError(f"gt labels outside [0, {num_classes})")
    present = np.unique(gt[valid])
    if exclude_background:
        present = present[present != 0]
    masks = np.stack([(gt == c) & valid for c in present]) if present.size else \
        np.zeros((0,) + gt.shape, dtype=bool)
    return present.astype(np.int64), masks.astype(np.float64), valid.astype(np.float64)


def _bce_elem(logits, targets):
    # max(l,0) - l*t + log(1 + exp(-|l|)), numerically stable
    return logits.relu() - logits * targets + (1.0 + (-logits.abs()).exp()).log()


def _bce_elem_np(logits, targets):
    return np.maximum(logits, 0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))


def seg_loss(mask_logits, class_logits, gt, num_classes,
             match_weights=(2.0, 5.0, 5.0), no_object_weight=0.1,
             exclude_background=True):
    """Hungarian-matched mask + class losses against a label map.

    mask_logits: [Nq,H,W] at the label map resolution. class_logits:
    [Nq,K+1], last column is "no object". Matching cost is
    ce_w*CE + bce_w*BCE + dice_w*Dice; matched pairs then contribute
    mask BCE + Dice and class CE, unmatched queries contribute no-object
    CE down-weighted by `no_object_weight`.

    Returns (terms, match) where terms maps mask_bce/mask_dice/class_ce to
    scalar tensors.
    """
    nq = mask_logits.shape[0]
    gt = np.asarray(gt)
    if mask_logits.shape[1:] != gt.shape:
        raise DimensionError(
            f"seg_loss: masks {mask_logits.shape} vs label map {gt.shape}")
    if class_logits.shape[0] != nq or class_logits.shape[1] != num_classes + 1:
        raise DimensionError(
            f"seg_loss: class logits {class_logits.shape}, expected [{nq},{num_classes + 1}]")
    ce_w, bce_w, dice_w = match_weights

    classes, tmasks, valid = build_mask_targets(gt, num_classes, exclude_background)
    nt = classes.size
    ml = mask_logits.clamp(-BCE_LOGIT_CLAMP, BCE_LOGIT_CLAMP)

    if nt == 0:
        target_cols = np.full(nq, num_classes, dtype=np.int64)
        ce = _class_ce(class_logits, target_cols, np.full(nq, no_object_weight))
        return ({"mask_bce": Tensor(0.0), "mask_dice": Tensor(0.0), "class_ce": ce},
                hungarian(np.zeros((0, 0))))

    nvalid = max(valid.sum(), 1.0)
    with no_grad():
        lg = ml.data.reshape(nq, -1)
        tm = tmasks.reshape(nt, -1)
        vw = valid.reshape(-1)
        probs = _np_softmax(class_logits.data)
        cost_ce = -np.log(probs[:, classes] + 1e-12)
        bce_pair = _bce_elem_np(lg[:, None, :], tm[None, :, :]) * vw
        cost_bce = bce_pair.sum(axis=2) / nvalid
        p = 1.0 / (1.0 + np.exp(-lg))
        inter = (p * vw) @ tm.T
        denom = (p * vw).sum(axis=1, keepdims=True) + (tm * vw).sum(axis=1)[None, :]
        cost_dice = 1.0 - (2.0 * inter + DICE_EPS) / (denom + DICE_EPS)
        match = hungarian(ce_w * cost_ce + bce_w * cost_bce + dice_w * cost_dice)

    vw_t = Tensor(valid)
    bce_terms = []
    dice_terms = []
    target_cols = np.full(nq, num_classes, dtype=np.int64)
    weights = np.full(nq, no_object_weight)
    for q, t in match.pairs.items():
        target_cols[q] = classes[t]
        weights[q] = 1.0
        m = Tensor(tmasks[t])
        lq = ml[q]
        bce_terms.append(((_bce_elem(lq, m) * vw_t).sum()) * (1.0 / nvalid))
        pq = lq.sigmoid() * vw_t
        num = (pq * m).sum() * 2.0 + DICE_EPS
        den = pq.sum() + (m * vw_t).sum() + DICE_EPS
        dice_terms.append(1.0 - num / den)

    mask_bce = _mean_scalars(bce_terms)
    mask_dice = _mean_scalars(dice_terms)
    class_ce = _class_ce(class_logits, target_cols, weights)
    return ({"mask_bce": mask_bce, "mask_dice": mask_dice, "class_ce": class_ce}, match)


def _mean_scalars(terms):
    if not terms:
        return Tensor(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


def _class_ce(class_logits, targets, weights):
    # weighted mean cross-entropy; weights down-scale the no-object rows
    probs = softmax(class_logits, axis=-1)
    picked = (probs * one_hot(targets, class_logits.shape[1])).sum(axis=-1)
    ce = -(picked.clamp(1e-12, 1.0).log())
    w = Tensor(np.asarray(weights, dtype=np.float64))
    return (ce * w).sum() * (1.0 / max(float(np.sum(weights)), 1e-12))


def _np_softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
