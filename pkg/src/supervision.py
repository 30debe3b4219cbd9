# src/supervision.py
# Ground-truth derivation, the seven supervised losses and their learned weighting.
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from src import nn
from src import tensor_core as tc
from src.config import LOSS_HEADS
from src.tensor_core import ContractError, NonFiniteError, Tensor


# =========================
# Targets
# =========================
@dataclass
class SupervisionTargets:
    semantic: np.ndarray  # B x H x W class ids
    binary: np.ndarray  # B x H x W in {0, 1}
    boundary: np.ndarray  # B x H x W in {0, 1}
    n_classes: int


def _dilate3x3(mask: np.ndarray) -> np.ndarray:
    pad = [(0, 0)] * (mask.ndim - 2) + [(1, 1), (1, 1)]
    p = np.pad(mask, pad)
    h, w = mask.shape[-2], mask.shape[-1]
    out = np.zeros_like(mask)
    for di in range(3):
        for dj in range(3):
            out |= p[..., di:di + h, dj:dj + w]
    return out


def boundary_target(labels: np.ndarray) -> np.ndarray:
    """1 where a 4-neighbour carries a different class id, widened once by a 3x3 dilation."""
    labels = np.asarray(labels)
    edge = np.zeros(labels.shape, dtype=bool)
    dv = labels[..., 1:, :] != labels[..., :-1, :]
    edge[..., 1:, :] |= dv
    edge[..., :-1, :] |= dv
    dh = labels[..., :, 1:] != labels[..., :, :-1]
    edge[..., :, 1:] |= dh
    edge[..., :, :-1] |= dh
    return _dilate3x3(edge).astype(np.int64)


def binary_target(labels: np.ndarray) -> np.ndarray:
    return (np.asarray(labels) > 0).astype(np.int64)


def make_targets(labels: np.ndarray, n_classes: int) -> SupervisionTargets:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim == 2:
        labels = labels[None]
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ContractError(f"label ids must lie in 0..{n_classes - 1}, got {labels.min()}..{labels.max()}")
    return SupervisionTargets(labels, binary_target(labels), boundary_target(labels), n_classes)


# =========================
# Cross-entropy
# =========================
def cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean over pixels of -log softmax(logits)[target]."""
    target = np.asarray(target, dtype=np.int64)
    if logits.ndim != 4:
        raise ContractError(f"cross_entropy: logits must be BKHW, got {logits.shape}")
    b, k, h, w = logits.shape
    if k < 2:
        raise ContractError(f"cross_entropy: needs at least 2 classes, got {k}")
    if target.shape != (b, h, w):
        raise ContractError(f"cross_entropy: target shape {target.shape} does not match logits {logits.shape}")
    if target.min() < 0 or target.max() >= k:
        raise ContractError(f"cross_entropy: target ids must lie in 0..{k - 1}, got {target.min()}..{target.max()}")
    onehot = (target[:, None, :, :] == np.arange(k)[None, :, None, None]).astype(logits.dtype)
    picked = tc.sum(tc.log_softmax(logits, axis=1) * tc.as_tensor(onehot, like=logits))
    return picked * (-1.0 / (b * h * w))


# =========================
# Heads / breakdown
# =========================
@dataclass
class SupervisionHeads:
    bin: nn.ConvParams  # C_dec -> 2, for D_out
    bou: nn.ConvParams  # C_dec -> 2, for S_out


def init_heads(rng, width: int) -> SupervisionHeads:
    return SupervisionHeads(bin=nn.init_conv(rng, width, 2, 1), bou=nn.init_conv(rng, width, 2, 1))


@dataclass
class LossBreakdown:
    bin: list = field(default_factory=list)  # 3 scalars
    bou: list = field(default_factory=list)  # 3 scalars
    se: Tensor | None = None
    total: Tensor | None = None

    def components(self) -> list:
        """The seven losses in the fixed order bin1..3, bou1..3, se."""
        return [*self.bin, *self.bou, self.se]

    def as_dict(self) -> dict[str, float]:
        out = {name: t.item() for name, t in zip(LOSS_HEADS, self.components())}
        if self.total is not None:
            out["total"] = self.total.item()
        return out


def _component(name: str, compute):
    try:
        return compute()
    except NonFiniteError as e:
        err = NonFiniteError(f"loss component '{name}': {e}")
        err.component = name
        raise err from e


def compute_losses(outputs, targets: SupervisionTargets, heads: SupervisionHeads) -> LossBreakdown:
    """bou_j from S_out_j, bin_j from D_out_j, se from the summed semantic logits."""
    if outputs.logits.shape[1] != targets.n_classes:
        raise ContractError(
            f"compute_losses: semantic logits carry {outputs.logits.shape[1]} classes, targets {targets.n_classes}"
        )
    h, w = targets.semantic.shape[-2], targets.semantic.shape[-1]

    def head_loss(feature, conv, target):
        return cross_entropy(tc.resize_bilinear(nn.conv(feature, conv), h, w), target)

    out = LossBreakdown()
    for j, d_out in enumerate(outputs.d_out, start=1):
        out.bin.append(_component(f"bin{j}", lambda d=d_out: head_loss(d, heads.bin, targets.binary)))
    for j, s_out in enumerate(outputs.s_out, start=1):
        out.bou.append(_component(f"bou{j}", lambda s=s_out: head_loss(s, heads.bou, targets.boundary)))
    out.se = _component("se", lambda: cross_entropy(tc.resize_bilinear(outputs.logits, h, w), targets.semantic))
    return out


# =========================
# Automatic weighting
# =========================
@dataclass
class AwlParams:
    s: Tensor  # (7,), sigma_k = exp(s_k / 2)


def init_awl(n: int = len(LOSS_HEADS)) -> AwlParams:
    return AwlParams(nn.param(np.zeros(n)))


def awl_sigmas(awl: AwlParams) -> np.ndarray:
    return np.exp(awl.s.data / 2.0)


def _stack(losses: list) -> Tensor:
    return tc.concat([tc.reshape(loss, (1,)) for loss in losses], axis=0)


def awl_total(losses, awl: AwlParams, loss_mask=LOSS_HEADS) -> Tensor:
    """sum_k exp(-s_k)/2 * L_k + s_k/2 over the heads kept by loss_mask."""
    comps = losses.components() if isinstance(losses, LossBreakdown) else list(losses)
    if len(comps) != awl.s.shape[0]:
        raise ContractError(f"awl_total: {len(comps)} losses for {awl.s.shape[0]} weights")
    stacked = _stack(comps)
    s = awl.s
    keep = np.array([name in loss_mask for name in LOSS_HEADS[: len(comps)]], dtype=stacked.dtype)
    terms = tc.exp(s * -1.0) * 0.5 * stacked + s * 0.5
    return tc.sum(terms * tc.as_tensor(keep, like=stacked))


def fixed_weight_total(losses, weights) -> Tensor:
    """sum_k w_k L_k / 2, no regulariser."""
    comps = losses.components() if isinstance(losses, LossBreakdown) else list(losses)
    if len(weights) != len(comps):
        raise ContractError(f"fixed_weight_total: {len(weights)} weights for {len(comps)} losses")
    stacked = _stack(comps)
    w = np.asarray(weights, dtype=stacked.dtype) * 0.5
    return tc.sum(stacked * tc.as_tensor(w, like=stacked))


def total_loss(losses: LossBreakdown, awl: AwlParams, ablation=None) -> Tensor:
    """Learned weighting unless the ablation fixes the weights; stores the result on losses.total."""
    if ablation is not None and ablation.fixed_loss_weights:
        total = fixed_weight_total(losses, ablation.fixed_loss_weights)
    else:
        mask = ablation.loss_mask if ablation is not None else LOSS_HEADS
        total = awl_total(losses, awl, mask)
    losses.total = total
    return total
