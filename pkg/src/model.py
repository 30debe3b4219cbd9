# src/model.py
# Whole network: both encoder branches, per-level fusion, decoder, supervision heads
# and the loss weights, plus the forward pass that wires them together.
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from src.ccnn import state_merge
from src.config import AblationConfig, RunConfig
from src.decoder import DecoderOutputs, DecoderParams, decode, init_decoder
from src.encoder import BranchFeatures, EncoderParams, encode, init_encoder
from src.fusion import fuse_pyramid, init_ceaef
from src.supervision import AwlParams, SupervisionHeads, init_awl, init_heads
from src.tensor_core import DimensionError, NamedTensorSet, Tensor

logger = logging.getLogger(__name__)

DECODER_STRIDE = 4


@dataclass
class ModelParams:
    encoder: EncoderParams
    fusion: list  # list[CeaefParams], one per level
    decoder: DecoderParams
    heads: SupervisionHeads
    awl: AwlParams


@dataclass
class Model:
    params: ModelParams
    config: RunConfig
    ablation: AblationConfig = field(default_factory=AblationConfig)

    @property
    def n_classes(self) -> int:
        return self.config.n_classes

    @property
    def dtype(self):
        return self.params.awl.s.dtype


@dataclass
class ForwardResult:
    outputs: DecoderOutputs
    rgb: BranchFeatures
    thermal: BranchFeatures
    pyramid: list


def init_model(cfg: RunConfig, seed: int | None = None) -> Model:
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    width = cfg.decoder.width
    channels = tuple(cfg.encoder.channels)
    ccnn_cfg = replace(cfg.ccnn, mode=cfg.ablation.ccnn_mode) if cfg.ablation.ccnn_mode else cfg.ccnn
    params = ModelParams(
        encoder=init_encoder(rng, cfg.encoder, ccnn_cfg),
        fusion=[init_ceaef(rng, c, width, cfg.ceaef.reduction) for c in channels],
        decoder=init_decoder(
            rng,
            width,
            channels[-1],
            cfg.image_h // DECODER_STRIDE,
            cfg.image_w // DECODER_STRIDE,
            cfg.n_classes,
            ccnn_cfg,
            cfg.ceaef.reduction,
        ),
        heads=init_heads(rng, width),
        awl=init_awl(),
    )
    model = Model(params=params, config=cfg, ablation=cfg.ablation)
    if cfg.precision == 64:
        set_precision(model, 64)
    logger.info("model initialised: %d tensors, %d scalars", len(named_tensors(model)), named_tensors(model).count())
    return model


def named_tensors(model: Model) -> NamedTensorSet:
    """Every parameter and buffer, keyed by its dotted path."""
    return NamedTensorSet.collect(model.params)


def trainable(model: Model) -> NamedTensorSet:
    return named_tensors(model).trainable()


def set_precision(model: Model, bits: int) -> Model:
    named_tensors(model).astype(np.float64 if bits == 64 else np.float32)
    return model


def _as_input(x, dtype) -> Tensor:
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    if data.ndim == 3:
        data = data[None]
    return Tensor(np.asarray(data, dtype=dtype))


def forward(model: Model, rgb, thermal, t_steps: int, training: bool = False) -> ForwardResult:
    cfg = model.config
    rgb = _as_input(rgb, model.dtype)
    thermal = _as_input(thermal, model.dtype)
    if rgb.shape[2:] != (cfg.image_h, cfg.image_w):
        raise DimensionError(f"forward: input is {rgb.shape[2]}x{rgb.shape[3]}, model expects {cfg.image_h}x{cfg.image_w}")
    p = model.params
    rgb_branch, th_branch = encode(rgb, thermal, p.encoder, t_steps, training)
    pyramid = fuse_pyramid(rgb_branch.features, th_branch.features, p.fusion, model.ablation.disable_ceaef, training)
    seed = state_merge(rgb_branch.final_state, th_branch.final_state)
    outputs = decode(pyramid, seed, t_steps, p.decoder, (rgb.shape[2], rgb.shape[3]), training, model.ablation)
    return ForwardResult(outputs=outputs, rgb=rgb_branch, thermal=th_branch, pyramid=pyramid)


def predict(model: Model, rgb, thermal, t_steps: int) -> np.ndarray:
    """Argmax over the summed semantic logits, B x H x W."""
    logits = forward(model, rgb, thermal, t_steps).outputs.logits
    return np.argmax(logits.data, axis=1).astype(np.int64)
