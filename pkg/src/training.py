# src/training.py
# Two-stage training (direct training, then fine-tuning with more CCNN iterations),
# evaluation over a split, and single-pair inference.
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
import pandas as pd

from src.augment import augment_sample, resize_image, resize_labels
from src.checkpoint import (
    Checkpoint,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    restore,
    save_checkpoint,
    snapshot,
)
from src.config import LOSS_HEADS, RunConfig, dump_config, stage_t_steps, validate, worker_threads
from src.io import DatasetError, SceneSample, read_rgb, read_thermal, write_color, write_labels
from src.metrics import ConfusionCounts, MetricsReport, confusion_counts, report_from_counts
from src.model import Model, forward, init_model, predict, trainable
from src.optim import AdamW, clip_grad_norm
from src.supervision import awl_sigmas, compute_losses, make_targets, total_loss
from src.tensor_core import NonFiniteError, backward

logger = logging.getLogger(__name__)

STAGES = ("stage1", "stage2")
LOG_COLUMNS = ["stage", "epoch", "total", *LOSS_HEADS]


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: Model
    log: pd.DataFrame
    checkpoints: dict = field(default_factory=dict)  # stage -> path (or None when kept in memory)


# =========================
# Data
# =========================
def materialize(dataset) -> list[SceneSample]:
    """A loaded Dataset handle or any sequence of SceneSample, as a list."""
    if hasattr(dataset, "load"):
        return [dataset.load(i) for i in range(len(dataset))]
    return list(dataset)


def stack_batch(samples: list[SceneSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rgb = np.stack([s.rgb for s in samples])
    thermal = np.stack([s.thermal for s in samples])
    labels = np.stack([s.labels for s in samples]).astype(np.int64)
    return rgb, thermal, labels


# =========================
# Training
# =========================
def train_step(model: Model, optimizer: AdamW, samples: list[SceneSample], t_steps: int, clip_norm: float) -> dict:
    rgb, thermal, labels = stack_batch(samples)
    targets = make_targets(labels, model.n_classes)
    try:
        result = forward(model, rgb, thermal, t_steps, training=True)
        losses = compute_losses(result.outputs, targets, model.params.heads)
        total = total_loss(losses, model.params.awl, model.ablation)
    except NonFiniteError as e:
        component = getattr(e, "component", None)
        raise TrainingError(f"non-finite loss in {component or 'forward pass'}: {e}") from e
    try:
        grads = backward(total, optimizer.params)
        if clip_norm > 0:
            clip_grad_norm(grads, clip_norm)
        optimizer.step(grads)
    except NonFiniteError as e:
        component = getattr(e, "component", None)
        raise TrainingError(f"non-finite gradient in {component or 'backward pass'}: {e}") from e
    return losses.as_dict()


def run_stage(
    model: Model,
    samples: list[SceneSample],
    stage: str,
    rng: np.random.Generator,
) -> list[dict]:
    cfg = model.config
    stage_cfg = getattr(cfg, stage)
    t_steps = stage_t_steps(cfg, stage)
    params = trainable(model)
    optimizer = AdamW(
        params,
        lr=stage_cfg.lr,
        weight_decay=stage_cfg.weight_decay,
        cfg=cfg.optim,
        no_decay=frozenset(n for n in params if n.startswith("awl.")),
    )
    rows = []
    for epoch in range(1, stage_cfg.epochs + 1):
        order = rng.permutation(len(samples))
        sums = dict.fromkeys(["total", *LOSS_HEADS], 0.0)
        for start in range(0, len(order), stage_cfg.batch_size):
            batch = [augment_sample(samples[i], cfg.augment, rng) for i in order[start:start + stage_cfg.batch_size]]
            values = train_step(model, optimizer, batch, t_steps, stage_cfg.clip_norm)
            for key in sums:
                sums[key] += values[key] * len(batch)
        row = {"stage": stage, "epoch": epoch, **{k: v / len(samples) for k, v in sums.items()}}
        rows.append(row)
        logger.info(
            "%s epoch %d/%d total=%.5f %s",
            stage, epoch, stage_cfg.epochs, row["total"],
            " ".join(f"{k}={row[k]:.4f}" for k in LOSS_HEADS),
        )
        logger.debug("%s epoch %d sigmas=%s", stage, epoch, np.array2string(awl_sigmas(model.params.awl), precision=4))
    return rows


def _handoff(model: Model, ckpt: Checkpoint) -> Model:
    """Start the next stage from the saved end-of-stage tensors."""
    fresh = init_model(model.config)
    fresh.ablation = model.ablation
    return restore(fresh, ckpt)


def train(cfg: RunConfig, dataset, out_dir=None, resume=None) -> TrainResult:
    """
    Stage 1 then stage 2. Each stage ends with a checkpoint (stage1.ckpt, stage2.ckpt
    under out_dir); stage 2 starts from the stage-1 checkpoint. resume names a stage-1
    checkpoint to skip straight to fine-tuning.
    """
    validate(cfg)
    samples = materialize(dataset)
    if not samples:
        raise TrainingError("training set is empty")
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.conf"), "w", encoding="utf-8") as f:
            f.write(dump_config(cfg))

    rng = np.random.default_rng(cfg.seed)
    model = init_model(cfg)
    stages = list(STAGES)
    if resume is not None:
        ckpt = load_checkpoint(resume)
        restore(model, ckpt)
        done = ckpt.metadata.get("stage", "")
        if done in STAGES:
            stages = stages[STAGES.index(done) + 1:]
        logger.info("resumed from %s (stage=%s)", resume, done or "?")

    rows, checkpoints = [], {}
    for stage in stages:
        rows += run_stage(model, samples, stage, rng)
        meta = dict(stage=stage, epoch=getattr(cfg, stage).epochs, t_steps=stage_t_steps(cfg, stage))
        path = None
        if out_dir is not None:
            path = os.path.join(out_dir, f"{stage}.ckpt")
            save_checkpoint(path, model, **meta)
        checkpoints[stage] = path
        if stage != STAGES[-1]:
            saved = load_checkpoint(path) if path else decode_checkpoint(encode_checkpoint(snapshot(model, **meta)))
            model = _handoff(model, saved)

    log = pd.DataFrame(rows, columns=LOG_COLUMNS)
    if out_dir is not None:
        log.to_csv(os.path.join(out_dir, "epoch_log.csv"), index=False, float_format="%.6f")
    return TrainResult(model=model, log=log, checkpoints=checkpoints)


def load_model(cfg: RunConfig, checkpoint_path) -> Model:
    model = init_model(cfg)
    return restore(model, load_checkpoint(checkpoint_path))


# =========================
# Evaluation / inference
# =========================
def _sample_counts(model: Model, sample: SceneSample, t_steps: int, zero_thermal_night: bool) -> ConfusionCounts:
    thermal = np.zeros_like(sample.thermal) if zero_thermal_night and sample.night else sample.thermal
    pred = predict(model, sample.rgb[None], thermal[None], t_steps)[0]
    return confusion_counts(pred, sample.labels, model.n_classes)


def evaluate(model: Model, dataset, t_steps: int | None = None, zero_thermal_night: bool = False) -> MetricsReport:
    """
    Argmax of the summed semantic logits per pixel, scored against the labels. With
    zero_thermal_night the thermal input of night samples is blanked (control run).
    """
    samples = materialize(dataset)
    t = stage_t_steps(model.config, "stage2") if t_steps is None else t_steps
    with ThreadPoolExecutor(max_workers=worker_threads()) as pool:
        counts = list(pool.map(lambda s: _sample_counts(model, s, t, zero_thermal_night), samples))
    merged = reduce(ConfusionCounts.merge, counts, ConfusionCounts.empty(model.n_classes))
    report = report_from_counts(merged)
    logger.info("evaluated %d samples: mAcc=%.4f mIoU=%.4f aAcc=%.4f", len(samples), report.m_acc, report.m_iou, report.a_acc)
    return report


def segment(model: Model, rgb: np.ndarray, thermal: np.ndarray, t_steps: int | None = None) -> np.ndarray:
    """Label map (H x W) for one pair of any size; the network runs at the configured size."""
    if rgb.shape[1:] != thermal.shape[1:]:
        raise DatasetError(f"rgb {rgb.shape[1:]} and thermal {thermal.shape[1:]} differ in size")
    h, w = rgb.shape[1:]
    cfg = model.config
    t = stage_t_steps(cfg, "stage2") if t_steps is None else t_steps
    pred = predict(
        model,
        resize_image(rgb, cfg.image_h, cfg.image_w)[None],
        resize_image(thermal, cfg.image_h, cfg.image_w)[None],
        t,
    )[0]
    return resize_labels(pred, h, w)


def infer(model: Model, rgb_path, thermal_path, out_path, t_steps: int | None = None) -> np.ndarray:
    """Writes the colour-coded prediction to out_path and the raw ids to <stem>_labels.png."""
    labels = segment(model, read_rgb(rgb_path), read_thermal(thermal_path), t_steps)
    out_path = str(out_path)
    write_color(out_path, labels)
    stem = out_path[:-4] if out_path.lower().endswith(".png") else out_path
    write_labels(f"{stem}_labels.png", labels)
    logger.info("inference written: %s", out_path)
    return labels
