# src/encoder.py
# Two-branch, four-stage feature extractor. Each stage is a CBL stack followed by a
# CCNN layer and a residual add; the branch's CCNN state threads through all stages.
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src import nn
from src.ccnn import (
    CcnnParams,
    CcnnState,
    StateAdapterParams,
    ccnn_forward,
    init_ccnn,
    init_state_adapter,
    state_adapt,
    zero_state,
)
from src.config import ENCODER_STRIDES, CcnnConfig, EncoderConfig
from src.tensor_core import ContractError, DimensionError, Tensor

INPUT_DIVISOR = 32


@dataclass
class StageParams:
    blocks: list  # list[nn.CblParams], the first one strided
    ccnn: CcnnParams


@dataclass
class BranchParams:
    stages: list  # list[StageParams], 4 entries
    adapters: list  # list[StateAdapterParams], one per stage transition


@dataclass
class EncoderParams:
    rgb: BranchParams
    thermal: BranchParams


@dataclass
class BranchFeatures:
    features: list  # R_i / T_i at strides 4, 8, 16, 32
    final_state: CcnnState


# =========================
# Construction
# =========================
def _init_stage(rng, c_in: int, c_out: int, stride: int, blocks: int, ccnn_cfg: CcnnConfig) -> StageParams:
    if stride == 4:
        first = nn.init_cbl(rng, c_in, c_out, kernel=7, stride=4, padding=3)
    else:
        first = nn.init_cbl(rng, c_in, c_out, kernel=3, stride=stride)
    rest = [nn.init_cbl(rng, c_out, c_out, kernel=3) for _ in range(blocks - 1)]
    return StageParams(blocks=[first] + rest, ccnn=init_ccnn(rng, c_out, ccnn_cfg))


def init_branch(rng, in_channels: int, cfg: EncoderConfig, ccnn_cfg: CcnnConfig) -> BranchParams:
    channels = tuple(cfg.channels)
    stages = []
    c_in = in_channels
    for c_out, stride in zip(channels, ENCODER_STRIDES):
        stages.append(_init_stage(rng, c_in, c_out, stride, cfg.blocks_per_stage, ccnn_cfg))
        c_in = c_out
    adapters = [init_state_adapter(rng, a, b) for a, b in zip(channels, channels[1:])]
    return BranchParams(stages=stages, adapters=adapters)


def init_encoder(
    rng: np.random.Generator,
    cfg: EncoderConfig | None = None,
    ccnn_cfg: CcnnConfig | None = None,
    thermal_channels: int = 1,
) -> EncoderParams:
    """RGB branch takes 3 channels; the thermal branch has its own stem (1 channel unless replicated)."""
    cfg = cfg or EncoderConfig()
    ccnn_cfg = ccnn_cfg or CcnnConfig()
    return EncoderParams(
        rgb=init_branch(rng, 3, cfg, ccnn_cfg),
        thermal=init_branch(rng, thermal_channels, cfg, ccnn_cfg),
    )


# =========================
# Forward
# =========================
def conv_stack(x: Tensor, stage: StageParams, training: bool = False) -> Tensor:
    for block in stage.blocks:
        x = nn.cbl(x, block, training)
    return x


def encoder_stage(
    x: Tensor,
    stage: StageParams,
    state: CcnnState | None,
    t_steps: int,
    training: bool = False,
    adapter: StateAdapterParams | None = None,
) -> tuple[Tensor, CcnnState]:
    """X_i = conv_stack(x); (y, state') = CCNN(state, X_i); out = y + X_i."""
    x_i = conv_stack(x, stage, training)
    if state is None:
        state = zero_state(x_i.shape, x_i.dtype)
    elif adapter is not None:
        state = state_adapt(state, x_i.shape[1], x_i.shape[2], x_i.shape[3], adapter)
    if state.shape != x_i.shape:
        raise ContractError(f"encoder_stage: state shape {state.shape} does not match stage features {x_i.shape}")
    y_avg, state = ccnn_forward(state, x_i, stage.ccnn, t_steps)
    return y_avg + x_i, state


def encode_branch(x: Tensor, branch: BranchParams, t_steps: int, training: bool = False) -> BranchFeatures:
    features = []
    state = None
    for i, stage in enumerate(branch.stages):
        adapter = branch.adapters[i - 1] if i > 0 else None
        x, state = encoder_stage(x, stage, state, t_steps, training, adapter)
        features.append(x)
    return BranchFeatures(features=features, final_state=state)


def check_input(rgb: Tensor, thermal: Tensor) -> None:
    if rgb.ndim != 4 or thermal.ndim != 4:
        raise DimensionError(f"encode: inputs must be BCHW, got {rgb.shape} and {thermal.shape}")
    if rgb.shape[1] != 3:
        raise DimensionError(f"encode: rgb channel axis must be 3, got {rgb.shape[1]}")
    if rgb.shape[0] != thermal.shape[0] or rgb.shape[2:] != thermal.shape[2:]:
        raise DimensionError(f"encode: rgb {rgb.shape} and thermal {thermal.shape} are not aligned")
    h, w = rgb.shape[2], rgb.shape[3]
    if h % INPUT_DIVISOR or w % INPUT_DIVISOR:
        raise ContractError(f"encode: spatial size {h}x{w} must be divisible by {INPUT_DIVISOR}")


def encode(
    rgb: Tensor,
    thermal: Tensor,
    params: EncoderParams,
    t_steps: int,
    training: bool = False,
) -> tuple[BranchFeatures, BranchFeatures]:
    check_input(rgb, thermal)
    expected = params.thermal.stages[0].blocks[0].conv.weight.shape[1]
    if thermal.shape[1] != expected:
        raise DimensionError(f"encode: thermal channel axis must be {expected}, got {thermal.shape[1]}")
    return (
        encode_branch(rgb, params.rgb, t_steps, training),
        encode_branch(thermal, params.thermal, t_steps, training),
    )
