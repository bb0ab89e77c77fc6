"""Synthetic segmentation dataset: colored geometric shapes on a textured
background.

Every sample is rasterized analytically (no anti-aliasing), so the label
map agrees with the rendered geometry pixel-exactly. Class c > 0 draws a
fixed shape kind with a fixed hue band; class 0 is the low-saturation
textured canvas. Samples are deterministic per (seed, index).
"""

import colorsys
import os

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError
from .feature_io import ManifestSample, write_manifest
from .rng import spawn
from .tensor import Tensor

__all__ = ["class_table", "render_sample", "generate_dataset", "ShapeDataset",
           "load_image", "load_labels", "save_image", "save_labels"]

KINDS = ("rectangle", "circle", "triangle")


def class_table(num_classes):
    names = {0: "background"}
    for c in range(1, num_classes):
        names[c] = f"{KINDS[(c - 1) % 3]}{c}"
    return names


def _class_color(c, num_classes, rng):
    hue = (c - 1) / max(num_classes - 1, 1)
    hue = (hue + rng.uniform(-0.03, 0.03)) % 1.0
    sat = rng.uniform(0.75, 0.95)
    val = rng.uniform(0.7, 0.95)
    return np.array(colorsys.hsv_to_rgb(hue, sat, val))


def _background(size, rng):
    hue = rng.uniform(0.0, 1.0)
    sat = rng.uniform(0.05, 0.2)
    val = rng.uniform(0.25, 0.45)
    base = np.array(colorsys.hsv_to_rgb(hue, sat, val))
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    slope = rng.uniform(-0.08, 0.08, size=2)
    grad = slope[0] * yy + slope[1] * xx
    noise = rng.normal(0.0, 0.015, size=(size, size))
    img = base[:, None, None] + grad[None] + noise[None]
    return np.clip(img, 0.0, 1.0)


def _shape_mask(kind, size, rng):
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    margin = size // 8
    cy = rng.integers(margin, size - margin)
    cx = rng.integers(margin, size - margin)
    r = rng.integers(size // 8, size // 4 + 1)
    if kind == "rectangle":
        ry = rng.integers(size // 10, size // 4 + 1)
        return (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= r)
    if kind == "circle":
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    # triangle: apex up, flat base
    h = 2 * r
    top = cy - r
    rel = yy - top
    inside_rows = (rel >= 0) & (rel <= h)
    halfwidth = rel * r / h
    return inside_rows & (np.abs(xx - cx) <= halfwidth)


def render_sample(rng, size, num_classes, max_shapes=3, force_class=None,
                  empty_prob=0.05):
    """One (image [3,H,W] in [0,1], labels uint8 [H,W]) pair."""
    img = _background(size, rng)
    labels = np.zeros((size, size), dtype=np.uint8)
    if max_shapes <= 0 or rng.random() < empty_prob:
        return img, labels
    n_shapes = 1 + int(rng.integers(0, max_shapes))
    for k in range(n_shapes):
        if k == 0 and force_class is not None:
            c = force_class
        else:
            c = 1 + int(rng.integers(0, num_classes - 1))
        kind = KINDS[(c - 1) % 3]
        mask = _shape_mask(kind, size, rng)
        color = _class_color(c, num_classes, rng)
        img[:, mask] = color[:, None] + rng.normal(0.0, 0.01, size=(3, int(mask.sum())))
        labels[mask] = c
    return np.clip(img, 0.0, 1.0), labels


def save_image(path, img):
    arr = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(arr, mode="RGB").save(path)


def save_labels(path, labels):
    Image.fromarray(labels.astype(np.uint8), mode="L").save(path)


def load_image(path):
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    return Tensor(arr.transpose(2, 0, 1))


def load_labels(path):
    return np.asarray(Image.open(path), dtype=np.int64)


def generate_dataset(out_dir, n, image_size, num_classes, seed, max_shapes=3):
    """Write n samples plus a manifest; returns the manifest path."""
    if image_size % 8:
        raise ConfigError(f"image_size must be divisible by 8, got {image_size}")
    if num_classes < 2:
        raise ConfigError("num_classes must be >= 2 (background + at least one shape)")
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "labels"), exist_ok=True)
    samples = []
    for i in range(n):
        rng = spawn(seed, "sample", i)
        force = 1 + i % (num_classes - 1)  # guarantees class coverage
        img, labels = render_sample(rng, image_size, num_classes,
                                    max_shapes=max_shapes, force_class=force)
        img_rel = f"images/{i:05d}.png"
        lab_rel = f"labels/{i:05d}.png"
        save_image(os.path.join(out_dir, img_rel), img)
        save_labels(os.path.join(out_dir, lab_rel), labels)
        samples.append(ManifestSample(f"s{i:05d}", img_rel, lab_rel))
    manifest_path = os.path.join(out_dir, "manifest.tsv")
    write_manifest(manifest_path, class_table(num_classes), samples)
    return manifest_path


class ShapeDataset:
    """Loads manifest samples, caching decoded arrays in memory."""

    def __init__(self, manifest, cache=True):
        self.manifest = manifest
        self.cache = {} if cache else None

    def __len__(self):
        return len(self.manifest.samples)

    def get(self, i):
        if self.cache is not None and i in self.cache:
            return self.cache[i]
        s = self.manifest.samples[i]
        image = load_image(self.manifest.resolve(s.image_path))
        labels = load_labels(self.manifest.resolve(s.label_path))
        if labels.shape != image.shape[1:]:
            raise DataError(f"sample {s.sample_id}: label map {labels.shape} "
                            f"does not match image {image.shape[1:]}")
        item = (image, labels, s.feature_path)
        if self.cache is not None:
            self.cache[i] = item
        return item
