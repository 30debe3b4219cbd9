# src/synthetic.py
# Desk-scale RGB-T scenes: random rectangles and ellipses per class, with "night"
# samples where the RGB image is dimmed and only thermal stays informative.
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from PIL import Image, ImageDraw

from src.config import worker_threads
from src.io import NIGHT_FILE, SUBDIRS, SceneSample, write_sample, write_split
from src.tensor_core import ContractError

logger = logging.getLogger(__name__)

MAX_SHAPES = 3
NIGHT_DIM = 0.2
THERMAL_BACKGROUND = 0.2
THERMAL_OBJECT_MIN = 0.45
NOISE = 0.05

# class hues for RGB rendering; background is grey
_HUES = np.array(
    [
        (0.45, 0.45, 0.45),
        (0.9, 0.15, 0.15),
        (0.15, 0.8, 0.2),
        (0.2, 0.3, 0.95),
        (0.95, 0.85, 0.1),
        (0.8, 0.2, 0.85),
        (0.1, 0.85, 0.85),
        (0.95, 0.55, 0.1),
        (0.55, 0.3, 0.1),
    ]
)


def class_colour(k: int) -> np.ndarray:
    if k < len(_HUES):
        return _HUES[k]
    return np.random.default_rng(k).uniform(0.1, 0.95, 3)


def thermal_level(k: int, n_classes: int) -> float:
    if k == 0:
        return THERMAL_BACKGROUND
    span = max(n_classes - 2, 1)
    return THERMAL_OBJECT_MIN + 0.5 * (k - 1) / span


def _draw_labels(rng: np.random.Generator, h: int, w: int, n_classes: int) -> np.ndarray:
    mask = Image.new("L", (w, h), 0)
    draw = ImageDraw.Draw(mask)
    for _ in range(int(rng.integers(1, MAX_SHAPES + 1))):
        # each shape covers at most a quarter of the image
        sh = int(rng.integers(max(h // 8, 2), h // 2 + 1))
        sw = int(rng.integers(max(w // 8, 2), w // 2 + 1))
        y0 = int(rng.integers(0, h - sh + 1))
        x0 = int(rng.integers(0, w - sw + 1))
        k = int(rng.integers(1, n_classes))
        box = (x0, y0, x0 + sw - 1, y0 + sh - 1)
        if rng.random() < 0.5:
            draw.rectangle(box, fill=k)
        else:
            draw.ellipse(box, fill=k)
    return np.asarray(mask, dtype=np.int64).copy()


def gen_synthetic_scene(seed: int, h: int, w: int, n_classes: int, night_prob: float = 0.3) -> SceneSample:
    if n_classes < 3:
        raise ContractError(f"synthetic scenes need background plus >= 2 object classes, got n_classes={n_classes}")
    if h % 32 or w % 32 or h < 32 or w < 32:
        raise ContractError(f"synthetic scene size must be divisible by 32, got {h}x{w}")
    rng = np.random.default_rng(seed)
    labels = _draw_labels(rng, h, w, n_classes)
    while len(np.unique(labels)) < 2:
        labels = _draw_labels(rng, h, w, n_classes)
    night = bool(rng.random() < night_prob)

    colours = np.stack([class_colour(k) for k in range(n_classes)])
    rgb = colours[labels].transpose(2, 0, 1) + rng.normal(0.0, NOISE, (3, h, w))
    if night:
        rgb = rgb * NIGHT_DIM
    levels = np.array([thermal_level(k, n_classes) for k in range(n_classes)])
    thermal = levels[labels][None] + rng.normal(0.0, NOISE, (1, h, w))
    return SceneSample(
        rgb=np.clip(rgb, 0.0, 1.0).astype(np.float32),
        thermal=np.clip(thermal, 0.0, 1.0).astype(np.float32),
        labels=labels,
        night=night,
    )


def sample_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def write_synthetic_dataset(
    out_dir,
    count: int,
    seed: int,
    h: int = 64,
    w: int = 64,
    n_classes: int = 4,
    night_prob: float = 0.3,
    val_fraction: float = 0.2,
) -> list[str]:
    """Write rgb/, thermal/, labels/, night.txt and train/val/test splits (test = val)."""
    if count < 1:
        raise ContractError("count must be >= 1")
    out_dir = str(out_dir)
    for kind in SUBDIRS:
        os.makedirs(os.path.join(out_dir, kind), exist_ok=True)
    names = [f"{i:05d}" for i in range(count)]

    def make(i: int) -> bool:
        sample = gen_synthetic_scene(sample_seed(seed, i), h, w, n_classes, night_prob)
        write_sample(out_dir, names[i], sample)
        return sample.night

    with ThreadPoolExecutor(max_workers=worker_threads()) as pool:
        night_flags = list(pool.map(make, range(count)))

    with open(os.path.join(out_dir, NIGHT_FILE), "w", encoding="utf-8") as f:
        f.write("".join(f"{n}\n" for n, is_night in zip(names, night_flags) if is_night))
    n_val = int(round(count * val_fraction)) if count > 1 else 0
    train, val = names[: count - n_val], names[count - n_val:]
    write_split(out_dir, "train", train)
    write_split(out_dir, "val", val)
    write_split(out_dir, "test", val)
    logger.info("synthetic dataset %s: %d samples (%d train, %d val, %d night)", out_dir, count, len(train), len(val), sum(night_flags))
    return names
