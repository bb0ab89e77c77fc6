"""Codebooks and the three cluster-flavoured attention operators.

`attn` is plain scaled dot-product attention. `hs_attn` performs one
von Mises-Fisher meanshift update of its query centroids: every output
row is the unit-normalized, exp(kappa * cosine)-weighted mean of the
values. `vq`/`vmf_vq` are the hard one-hot limit: each feature is
replaced by its best-matching code, with a straight-through gradient so
the encoder side keeps training through the discrete step.
"""

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    DimensionError,
    Tensor,
    l2_normalize,
    matmul,
    softmax,
    straight_through,
    take_rows,
)

__all__ = [
    "Codebook",
    "Assignment",
    "CodebookStats",
    "attn",
    "hs_attn",
    "vq",
    "vmf_vq",
    "vq_loss",
    "codebook_stats",
    "freeze_quantizers",
]


class Codebook:
    """A learnable token set [C, d] with assignment statistics."""

    def __init__(self, size, dim, stage="", rng=None, init_scale=1.0):
        if rng is None:
            raise ValueError("Codebook needs an explicit rng for reproducible init")
        self.size = int(size)
        self.dim = int(dim)
        self.stage = stage
        scale = init_scale / np.sqrt(dim)
        self.tokens = Tensor(rng.standard_normal((self.size, self.dim)) * scale,
                             requires_grad=True)
        self.usage_counts = np.zeros(self.size, dtype=np.int64)

    def record_usage(self, indices):
        np.add.at(self.usage_counts, np.asarray(indices, dtype=np.int64).reshape(-1), 1)

    def reset_usage(self):
        self.usage_counts[:] = 0

    def restart_dead_codes(self, features, rng):
        """Re-seed never-used codes from random feature rows. Off by default in
        training; exposed for collapse experiments."""
        dead = np.flatnonzero(self.usage_counts == 0)
        if dead.size == 0 or features.shape[0] == 0:
            return 0
        picks = rng.integers(0, features.shape[0], size=dead.size)
        self.tokens.data[dead] = features[picks]
        return int(dead.size)


@dataclass
class Assignment:
    """Hard code assignment: one index per feature row, plus the winning score."""

    indices: np.ndarray
    similarity: np.ndarray


@dataclass
class CodebookStats:
    stage: str
    utilization: float
    entropy: float
    counts: np.ndarray = field(repr=False)


def attn(q, k, v):
    """softmax(QK^T / sqrt(d)) V."""
    if q.shape[1] != k.shape[1]:
        raise DimensionError(f"attn: query dim {q.shape} vs key dim {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise DimensionError(f"attn: key rows {k.shape} vs value rows {v.shape}")
    scores = matmul(q, k.T) * (1.0 / np.sqrt(q.shape[1]))
    return matmul(softmax(scores, axis=-1), v)


def hs_attn(q, k, v, kappa=20.0):
    """One vMF meanshift step: g(softmax(kappa * g(Q) g(K)^T) V).

    kappa=0 degenerates to the plain mean of V; kappa -> inf approaches
    the cosine-nearest value row. Output rows are always unit norm.
    """
    if kappa < 0:
        raise ValueError(f"kappa must be nonnegative, got {kappa}")
    if q.shape[1] != k.shape[1]:
        raise DimensionError(f"hs_attn: query dim {q.shape} vs key dim {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise DimensionError(f"hs_attn: key rows {k.shape} vs value rows {v.shape}")
    scores = matmul(l2_normalize(q, axis=-1), l2_normalize(k, axis=-1).T) * float(kappa)
    return l2_normalize(matmul(softmax(scores, axis=-1), v), axis=-1)


def _assign(scores):
    # per-feature argmax over the code axis; numpy argmax breaks ties low
    idx = np.argmax(scores, axis=1)
    best = scores[np.arange(scores.shape[0]), idx]
    return idx, best


class QuantizerFreeze:
    """Record/replay of non-differentiable buffers for finite-difference oracles.

    Straight-through gradients differentiate a surrogate in which the
    quantized values (and every stop-gradient buffer) are constants, so
    central differences of the true function disagree with the backward
    pass across any quantizer or sg(). The freeze records those buffers
    on a reference forward pass and replays them on later evaluations,
    turning the evaluated function into exactly the surrogate the
    backward pass differentiates.
    """

    def __init__(self):
        self.recording = True
        self.fifos = {}
        self.cursors = {}

    def replay(self):
        self.recording = False
        self.rewind()

    def rewind(self):
        self.cursors = {k: 0 for k in self.fifos}

    def _take(self, kind, *arrays):
        if self.recording:
            self.fifos.setdefault(kind, []).append(tuple(np.copy(a) for a in arrays))
            return arrays
        fifo = self.fifos.get(kind, [])
        cur = self.cursors.get(kind, 0)
        if cur >= len(fifo):
            raise RuntimeError(f"quantizer replay exhausted for '{kind}'; "
                               "call rewind() before each forward")
        self.cursors[kind] = cur + 1
        return fifo[cur]


_freeze = None


@contextmanager
def freeze_quantizers():
    """Enable record/replay mode on all vq/vmf_vq calls in the block."""
    global _freeze
    prev = _freeze
    _freeze = QuantizerFreeze()
    try:
        yield _freeze
    finally:
        _freeze = prev


def vq(codebook, v):
    """Hard dot-product quantization with a straight-through gradient.

    Each row of `v` becomes the code maximizing <v_i, q_j>. The returned
    map carries dL/dV = identity; code rows learn through `vq_loss`, not
    through this op.
    """
    if v.shape[1] != codebook.dim:
        raise DimensionError(f"vq: feature dim {v.shape} vs codebook dim {codebook.dim}")
    scores = v.data @ codebook.tokens.data.T
    idx, best = _assign(scores)
    values = codebook.tokens.data[idx]
    if _freeze is not None:
        idx, values = _freeze._take("assign", idx, values)
    codebook.record_usage(idx)
    z_q = straight_through(v, values)
    return z_q, Assignment(idx, best)


def vmf_vq(codebook, v):
    """VQ under a vMF prior: cosine assignment, normalized codes returned.

    Both codes and features are unit-normalized before the dot product,
    so assignment is scale invariant; the straight-through path runs
    through the feature normalization.
    """
    if v.shape[1] != codebook.dim:
        raise DimensionError(f"vmf_vq: feature dim {v.shape} vs codebook dim {codebook.dim}")
    vn = l2_normalize(v, axis=-1)
    tok = codebook.tokens.data
    norms = np.sqrt((tok ** 2).sum(axis=1, keepdims=True))
    tok_n = tok / np.where(norms >= 1e-12, norms, 1.0)
    scores = vn.data @ tok_n.T
    idx, best = _assign(scores)
    values = tok_n[idx]
    if _freeze is not None:
        idx, values = _freeze._take("assign", idx, values)
    codebook.record_usage(idx)
    z_q = straight_through(vn, values)
    return z_q, Assignment(idx, best)


def vq_loss(v, codebook, indices, beta=0.25):
    """Code/commitment loss: ||sg(V) - e||^2 + beta * ||V - sg(e)||^2.

    Squared norms are taken per feature row and averaged over rows. The
    first term trains the assigned code rows (gradient reaches the
    codebook through the row lookup); the second nudges features toward
    their codes. For vMF quantization pass the features in the space
    used for assignment, i.e. unit-normalized.
    """
    e = take_rows(codebook.tokens, indices)
    v_sg = v.detach()
    e_sg = e.detach()
    if _freeze is not None:
        v_data, e_data = _freeze._take("vq_loss_sg", v_sg.data, e_sg.data)
        v_sg, e_sg = Tensor(v_data), Tensor(e_data)
    code_term = ((v_sg - e) ** 2).sum(axis=-1).mean()
    commit_term = ((v - e_sg) ** 2).sum(axis=-1).mean()
    return code_term + commit_term * beta


def codebook_stats(codebook):
    """Utilization (fraction of codes used since reset) and usage entropy."""
    counts = codebook.usage_counts
    total = counts.sum()
    utilization = float((counts > 0).mean())
    if total == 0:
        entropy = 0.0
    else:
        p = counts[counts > 0] / total
        entropy = float(-(p * np.log(p)).sum())
    return CodebookStats(codebook.stage, utilization, entropy, counts.copy())
