# src/io.py
# Dataset directories (rgb/, thermal/, labels/ PNGs plus split files), PNG read/write
# and the class colour palette.
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

SUBDIRS = ("rgb", "thermal", "labels")
SPLITS = ("train", "val", "test")
NIGHT_FILE = "night.txt"

# class id -> colour; 0 is background
PALETTE = np.array(
    [
        (0, 0, 0),
        (64, 0, 128),
        (64, 64, 0),
        (0, 128, 192),
        (0, 0, 192),
        (128, 128, 0),
        (64, 64, 128),
        (192, 128, 128),
        (192, 64, 0),
        (255, 255, 255),
        (0, 192, 0),
        (192, 0, 192),
    ],
    dtype=np.uint8,
)


class DatasetError(ValueError):
    pass


@dataclass
class SceneSample:
    rgb: np.ndarray  # 3 x H x W in [0, 1]
    thermal: np.ndarray  # 1 x H x W in [0, 1]
    labels: np.ndarray  # H x W class ids
    night: bool = False
    name: str = ""


# =========================
# PNG helpers
# =========================
def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(x, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def read_rgb(path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1).copy()


def read_thermal(path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.float32) / 255.0
    return arr[None].copy()


def read_labels(path) -> np.ndarray:
    with Image.open(path) as img:
        if img.mode not in ("L", "P", "I", "I;16"):
            raise DatasetError(f"{os.path.basename(str(path))}: labels must be a single-channel image, got mode {img.mode}")
        return np.asarray(img, dtype=np.int64).copy()


def write_rgb(path, rgb: np.ndarray) -> None:
    Image.fromarray(to_uint8(np.asarray(rgb).transpose(1, 2, 0))).save(path)


def write_gray(path, x: np.ndarray) -> None:
    x = np.asarray(x)
    Image.fromarray(to_uint8(x[0] if x.ndim == 3 else x)).save(path)


def write_labels(path, labels: np.ndarray) -> None:
    Image.fromarray(np.asarray(labels, dtype=np.uint8)).save(path)


def colorize(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= len(PALETTE):
        raise DatasetError(f"palette covers ids 0..{len(PALETTE) - 1}, got {labels.min()}..{labels.max()}")
    return PALETTE[labels]


def write_color(path, labels: np.ndarray) -> None:
    Image.fromarray(colorize(labels)).save(path)


def write_sample(root, name: str, sample: SceneSample) -> None:
    write_rgb(os.path.join(root, "rgb", f"{name}.png"), sample.rgb)
    write_gray(os.path.join(root, "thermal", f"{name}.png"), sample.thermal)
    write_labels(os.path.join(root, "labels", f"{name}.png"), sample.labels)


# =========================
# Dataset directory
# =========================
def _stems(folder: str) -> set[str]:
    if not os.path.isdir(folder):
        return set()
    return {f[:-4] for f in os.listdir(folder) if f.lower().endswith(".png")}


def _read_list(path: str) -> list[str]:
    with open(path, encoding="utf-8") as f:
        return [line.strip() for line in f if line.strip()]


@dataclass
class Dataset:
    root: str
    names: list
    n_classes: int | None = None
    night: set = field(default_factory=set)

    def __len__(self) -> int:
        return len(self.names)

    def path(self, kind: str, name: str) -> str:
        return os.path.join(self.root, kind, f"{name}.png")

    def load(self, index: int) -> SceneSample:
        name = self.names[index]
        labels = read_labels(self.path("labels", name))
        if self.n_classes is not None and labels.size and labels.max() >= self.n_classes:
            raise DatasetError(f"{name}: label id {int(labels.max())} >= n_classes {self.n_classes}")
        rgb = read_rgb(self.path("rgb", name))
        thermal = read_thermal(self.path("thermal", name))
        if rgb.shape[1:] != labels.shape or thermal.shape[1:] != labels.shape:
            raise DatasetError(f"{name}: rgb {rgb.shape[1:]}, thermal {thermal.shape[1:]} and labels {labels.shape} are not aligned")
        return SceneSample(rgb=rgb, thermal=thermal, labels=labels, night=name in self.night, name=name)

    def subset(self, names) -> "Dataset":
        return Dataset(self.root, list(names), self.n_classes, self.night)


def load_dataset(root, split: str | None = None, n_classes: int | None = None) -> Dataset:
    root = str(root)
    stems = {kind: _stems(os.path.join(root, kind)) for kind in SUBDIRS}
    every = set().union(*stems.values())
    if not every:
        raise DatasetError(f"no samples under {root}")
    for name in sorted(every):
        for kind in SUBDIRS:
            if name not in stems[kind]:
                raise DatasetError(f"sample '{name}' has no {kind}/{name}.png")
    names = sorted(every)

    night_path = os.path.join(root, NIGHT_FILE)
    night = set(_read_list(night_path)) if os.path.exists(night_path) else set()

    if split is not None:
        split_path = os.path.join(root, f"{split}.txt")
        if os.path.exists(split_path):
            wanted = _read_list(split_path)
            missing = [n for n in wanted if n not in every]
            if missing:
                raise DatasetError(f"{split}.txt names unknown sample '{missing[0]}'")
            names = sorted(set(wanted))
        if not names:
            raise DatasetError(f"no samples in split '{split}' under {root}")
    logger.info("dataset %s split=%s: %d samples", root, split or "all", len(names))
    return Dataset(root=root, names=names, n_classes=n_classes, night=night)


def write_split(root, split: str, names) -> None:
    with open(os.path.join(root, f"{split}.txt"), "w", encoding="utf-8") as f:
        f.write("".join(f"{n}\n" for n in names))
