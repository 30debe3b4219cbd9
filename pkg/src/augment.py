# src/augment.py
# Training-time random crop (resized back to the input size) and horizontal flip.
from __future__ import annotations

from dataclasses import replace

import numpy as np

from src.config import AugmentConfig
from src.io import SceneSample
from src.tensor_core import interpolation_matrix


def resize_image(x: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bilinear resize of a C x H x W array (same weights as the network's resize)."""
    if x.shape[1:] == (h, w):
        return x
    ah = interpolation_matrix(x.shape[1], h, np.float64)
    aw = interpolation_matrix(x.shape[2], w, np.float64)
    return np.einsum("oh,chw,pw->cop", ah, x, aw).astype(x.dtype)


def resize_labels(labels: np.ndarray, h: int, w: int) -> np.ndarray:
    """Nearest-neighbour resize of an H x W id map."""
    if labels.shape == (h, w):
        return labels
    rows = np.minimum((np.arange(h) + 0.5) * labels.shape[0] / h, labels.shape[0] - 1).astype(np.int64)
    cols = np.minimum((np.arange(w) + 0.5) * labels.shape[1] / w, labels.shape[1] - 1).astype(np.int64)
    return labels[rows[:, None], cols[None, :]]


def random_crop(sample: SceneSample, fraction: float, rng: np.random.Generator) -> SceneSample:
    h, w = sample.labels.shape
    ch, cw = max(1, int(round(h * fraction))), max(1, int(round(w * fraction)))
    y0 = int(rng.integers(0, h - ch + 1))
    x0 = int(rng.integers(0, w - cw + 1))
    win = (slice(y0, y0 + ch), slice(x0, x0 + cw))
    return replace(
        sample,
        rgb=resize_image(sample.rgb[:, win[0], win[1]], h, w),
        thermal=resize_image(sample.thermal[:, win[0], win[1]], h, w),
        labels=resize_labels(sample.labels[win], h, w),
    )


def hflip(sample: SceneSample) -> SceneSample:
    return replace(
        sample,
        rgb=sample.rgb[:, :, ::-1].copy(),
        thermal=sample.thermal[:, :, ::-1].copy(),
        labels=sample.labels[:, ::-1].copy(),
    )


def augment_sample(sample: SceneSample, cfg: AugmentConfig, rng: np.random.Generator) -> SceneSample:
    if cfg.random_crop and cfg.crop_fraction < 1.0:
        sample = random_crop(sample, cfg.crop_fraction, rng)
    if cfg.hflip and rng.random() < cfg.hflip_prob:
        sample = hflip(sample)
    return sample
