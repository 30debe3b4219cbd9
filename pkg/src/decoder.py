# src/decoder.py
# Complementary interactive decoder: three stages of SFI (contour), DFI (skeleton) and
# MFE (blend), with one CCNN chain through the SFI modules and one through the DFI modules.
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from src import nn
from src import tensor_core as tc
from src.ccnn import (
    CcnnParams,
    CcnnState,
    StateAdapterParams,
    ccnn_forward,
    init_ccnn,
    init_state_adapter,
    state_adapt,
)
from src.config import DECODER_STAGES, CcnnConfig
from src.tensor_core import ContractError, DimensionError, Tensor

MDFE_RATES = (1, 3, 6, 12)


# =========================
# Parameters
# =========================
@dataclass
class SeparableModuleParams:
    """CCNN, pointwise conv, depthwise-separable conv, residual."""

    ccnn: CcnnParams
    pointwise: nn.ConvParams
    ds: nn.SeparableParams


@dataclass
class SfiParams:
    cbl_e1: nn.CblParams
    cbl_e2: nn.CblParams
    cbl_s: nn.CblParams
    cbl_add: nn.CblParams  # C -> C/2
    cbl_cat: nn.CblParams  # 2C -> C/2
    sep: SeparableModuleParams
    mdfe: list  # list[nn.CblParams], one per rate
    mdfe_merge: nn.CblParams  # 4C -> C


@dataclass
class TsaParams:
    entry: nn.ConvParams
    norm_r: nn.LayerNormParams  # over W
    linear_r: nn.LinearParams  # W -> W
    norm_c: nn.LayerNormParams  # over H
    linear_c: nn.LinearParams  # H -> H
    proj: nn.CblParams  # 3C -> C
    normalize: bool = True


@dataclass
class DfiParams:
    cbl_e3: nn.CblParams
    cbl_cat: nn.CblParams  # 2C -> C
    ca: nn.ChannelAttentionParams
    sa: nn.ConvParams  # 4 pooled maps -> 2 selection logits
    sep: SeparableModuleParams
    tsa: TsaParams


@dataclass
class MfeParams:
    conv_m: nn.ConvParams
    conv_sd: nn.ConvParams
    ca_s: nn.ChannelAttentionParams
    ca_d: nn.ChannelAttentionParams
    merge: nn.CblParams  # 3C -> C
    d: Tensor  # raw, delta = sigmoid(d)
    g: Tensor  # raw, gamma = sigmoid(g)


@dataclass
class DecoderParams:
    sfi: list
    dfi: list
    mfe: list
    seed_sfi: StateAdapterParams
    seed_dfi: StateAdapterParams
    head: nn.ConvParams  # shared 1x1 semantic head


@dataclass
class DecoderOutputs:
    s_out: list = field(default_factory=list)
    d_out: list = field(default_factory=list)
    s: list = field(default_factory=list)
    d: list = field(default_factory=list)
    m: list = field(default_factory=list)
    stage_logits: list = field(default_factory=list)  # head(M_j) at decoder resolution
    logits: Tensor | None = None  # summed and upsampled to the input size
    sfi_state: CcnnState | None = None
    dfi_state: CcnnState | None = None


# =========================
# Construction
# =========================
def init_separable_module(rng, c: int, ccnn_cfg: CcnnConfig) -> SeparableModuleParams:
    return SeparableModuleParams(
        ccnn=init_ccnn(rng, c, ccnn_cfg),
        pointwise=nn.init_conv(rng, c, c, 1),
        ds=nn.init_separable(rng, c, c),
    )


def init_sfi(rng, c: int, ccnn_cfg: CcnnConfig) -> SfiParams:
    half = c // 2
    return SfiParams(
        cbl_e1=nn.init_cbl(rng, c, c),
        cbl_e2=nn.init_cbl(rng, c, c),
        cbl_s=nn.init_cbl(rng, c, c),
        cbl_add=nn.init_cbl(rng, c, half),
        cbl_cat=nn.init_cbl(rng, 2 * c, half),
        sep=init_separable_module(rng, c, ccnn_cfg),
        mdfe=[nn.init_cbl(rng, c, c, kernel=3, dilation=r) for r in MDFE_RATES],
        mdfe_merge=nn.init_cbl(rng, len(MDFE_RATES) * c, c, kernel=1),
    )


def init_tsa(rng, c: int, h: int, w: int) -> TsaParams:
    return TsaParams(
        entry=nn.init_conv(rng, c, c, 3, bias=False),  # both paths open with a norm
        norm_r=nn.init_layer_norm(w),
        linear_r=nn.init_linear(rng, w, w),
        norm_c=nn.init_layer_norm(h),
        linear_c=nn.init_linear(rng, h, h),
        proj=nn.init_cbl(rng, 3 * c, c, kernel=1),
    )


def init_dfi(rng, c: int, h: int, w: int, ccnn_cfg: CcnnConfig, reduction: int = 4) -> DfiParams:
    return DfiParams(
        cbl_e3=nn.init_cbl(rng, c, c),
        cbl_cat=nn.init_cbl(rng, 2 * c, c),
        ca=nn.init_channel_attention(rng, c, reduction),
        sa=nn.init_conv(rng, 4, 2, 3),
        sep=init_separable_module(rng, c, ccnn_cfg),
        tsa=init_tsa(rng, c, h, w),
    )


def init_mfe(rng, c: int, reduction: int = 4) -> MfeParams:
    return MfeParams(
        conv_m=nn.init_conv(rng, c, c, 3),
        conv_sd=nn.init_conv(rng, c, c, 3),
        ca_s=nn.init_channel_attention(rng, c, reduction),
        ca_d=nn.init_channel_attention(rng, c, reduction),
        merge=nn.init_cbl(rng, 3 * c, c, kernel=3),
        d=nn.param(np.zeros(1)),
        g=nn.param(np.zeros(1)),
    )


def init_decoder(
    rng: np.random.Generator,
    width: int,
    deepest_channels: int,
    decoder_h: int,
    decoder_w: int,
    n_classes: int,
    ccnn_cfg: CcnnConfig | None = None,
    reduction: int = 4,
) -> DecoderParams:
    ccnn_cfg = ccnn_cfg or CcnnConfig()
    if width % 2:
        raise ContractError(f"decoder width must be even, got {width}")
    return DecoderParams(
        sfi=[init_sfi(rng, width, ccnn_cfg) for _ in range(DECODER_STAGES)],
        dfi=[init_dfi(rng, width, decoder_h, decoder_w, ccnn_cfg, reduction) for _ in range(DECODER_STAGES)],
        mfe=[init_mfe(rng, width, reduction) for _ in range(DECODER_STAGES)],
        seed_sfi=init_state_adapter(rng, deepest_channels, width),
        seed_dfi=init_state_adapter(rng, deepest_channels, width),
        head=nn.init_conv(rng, width, n_classes, 1),
    )


# =========================
# Shared pieces
# =========================
def _same_shape(name: str, *tensors: Tensor) -> None:
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != ref:
            raise DimensionError(f"{name}: input shapes {ref} and {t.shape} differ")


def separable_module(
    x: Tensor,
    p: SeparableModuleParams,
    state: CcnnState,
    t_steps: int,
    training: bool = False,
) -> tuple[Tensor, CcnnState]:
    """F_out = DS(PW(CCNN(x))) + x."""
    y_avg, state = ccnn_forward(state, x, p.ccnn, t_steps)
    return nn.separable(nn.conv(y_avg, p.pointwise), p.ds) + x, state


def mdfe(x: Tensor, branches: list, merge: nn.CblParams, training: bool = False) -> Tensor:
    parts = [nn.cbl(x, b, training) for b in branches]
    return nn.cbl(tc.concat(parts, axis=1), merge, training)


# =========================
# SFI
# =========================
def sfi_forward(
    e1: Tensor,
    e2: Tensor,
    s_prev: Tensor,
    params: SfiParams,
    state: CcnnState,
    t_steps: int,
    training: bool = False,
    use_mdfe: bool = True,
    trace: dict | None = None,
) -> tuple[Tensor, CcnnState]:
    _same_shape("sfi", e1, e2, s_prev)
    c1 = nn.cbl(e1, params.cbl_e1, training)
    f_add = c1 + nn.cbl(e2, params.cbl_e2, training)
    f_cat = tc.concat([c1, nn.cbl(s_prev, params.cbl_s, training)], axis=1)
    f_fuse = tc.concat([nn.cbl(f_add, params.cbl_add, training), nn.cbl(f_cat, params.cbl_cat, training)], axis=1)
    f_out, state = separable_module(f_fuse, params.sep, state, t_steps, training)
    s_out = mdfe(f_out, params.mdfe, params.mdfe_merge, training) if use_mdfe else f_out
    if trace is not None:
        trace.update(f_fuse=f_fuse, f_out=f_out)
    return s_out, state


# =========================
# DFI
# =========================
def spatial_select(a: Tensor, b: Tensor, conv_params: nn.ConvParams) -> Tensor:
    """Per-pixel softmax choice between two maps from their channel-mean and channel-max maps."""
    _same_shape("spatial_select", a, b)
    pooled = [
        tc.mean(a, axis=1, keepdims=True),
        tc.amax(a, axis=1, keepdims=True),
        tc.mean(b, axis=1, keepdims=True),
        tc.amax(b, axis=1, keepdims=True),
    ]
    logits = nn.conv(tc.concat(pooled, axis=1), conv_params)
    w_a, w_b = tc.softmax_pair(tc.narrow(logits, 1, 0, 1), tc.narrow(logits, 1, 1, 1))
    return a * w_a + b * w_b


def _rows(x: Tensor, norm: nn.LayerNormParams, linear: nn.LinearParams, normalize: bool) -> Tensor:
    # x is BCHW; transform along W
    if normalize:
        x = nn.layer_norm(x, norm)
    return nn.dense(x, linear)


def _cols(x: Tensor, norm: nn.LayerNormParams, linear: nn.LinearParams, normalize: bool) -> Tensor:
    xt = tc.transpose(x, (0, 1, 3, 2))
    return tc.transpose(_rows(xt, norm, linear, normalize), (0, 1, 3, 2))


def tsa_paths(x: Tensor, p: TsaParams) -> tuple[Tensor, Tensor, Tensor]:
    """Row-then-column and column-then-row transforms of x; returns (X_12, X_1c, X_2r)."""
    h, w = x.shape[2], x.shape[3]
    if p.linear_r.weight.shape != (w, w) or p.linear_c.weight.shape != (h, h):
        raise DimensionError(
            f"tsa: maps are sized for {p.linear_c.weight.shape[0]}x{p.linear_r.weight.shape[0]}, features are {h}x{w}"
        )
    x_1r = _rows(x, p.norm_r, p.linear_r, p.normalize)
    x_1c = _cols(x_1r, p.norm_c, p.linear_c, p.normalize)
    x_2c = _cols(x, p.norm_c, p.linear_c, p.normalize)
    x_2r = _rows(x_2c, p.norm_r, p.linear_r, p.normalize)
    return x_1c + x_2r, x_1c, x_2r


def tsa_forward(f_out: Tensor, p: TsaParams, training: bool = False) -> Tensor:
    x_12, x_1c, x_2r = tsa_paths(nn.conv(f_out, p.entry), p)
    return nn.cbl(tc.concat([x_12, x_1c, x_2r], axis=1), p.proj, training)


def dfi_forward(
    e3: Tensor,
    e4: Tensor,
    d_prev: Tensor,
    params: DfiParams,
    state: CcnnState,
    t_steps: int,
    training: bool = False,
    use_tsa: bool = True,
    use_sa: bool = True,
    trace: dict | None = None,
) -> tuple[Tensor, CcnnState]:
    _same_shape("dfi", e3, e4, d_prev)
    c3 = nn.cbl(e3, params.cbl_e3, training)
    f_cat = tc.concat([c3, e4], axis=1)
    gate = nn.channel_attention(nn.cbl(f_cat, params.cbl_cat, training), params.ca)
    f_fuse34 = gate * (c3 + e4)
    if use_sa:
        f_fuse = spatial_select(f_fuse34, d_prev, params.sa)
    else:
        f_fuse = (f_fuse34 + d_prev) * 0.5
    f_out, state = separable_module(f_fuse, params.sep, state, t_steps, training)
    d_out = tsa_forward(f_out, params.tsa, training) if use_tsa else f_out
    if trace is not None:
        trace.update(f_fuse34=f_fuse34, f_fuse=f_fuse, f_out=f_out)
    return d_out, state


# =========================
# MFE
# =========================
def mfe_gates(params: MfeParams) -> tuple[Tensor, Tensor]:
    return tc.sigmoid(params.d), tc.sigmoid(params.g)


def mfe_forward(
    s_out: Tensor,
    d_out: Tensor,
    m_prev: Tensor,
    params: MfeParams,
    training: bool = False,
    trace: dict | None = None,
) -> tuple[Tensor, Tensor, Tensor]:
    _same_shape("mfe", s_out, d_out, m_prev)
    delta, gamma = mfe_gates(params)
    blend = s_out * gamma + d_out * (1.0 - gamma)
    f_fuse = nn.conv(m_prev, params.conv_m) * (1.0 - delta) + nn.conv(blend, params.conv_sd) * delta
    both = s_out + d_out
    s_next = nn.channel_attention(f_fuse, params.ca_s) * both + f_fuse
    d_next = nn.channel_attention(f_fuse, params.ca_d) * both + f_fuse
    m = nn.cbl(tc.concat([f_fuse, s_next, d_next], axis=1), params.merge, training)
    if trace is not None:
        trace.update(f_fuse=f_fuse)
    return s_next, d_next, m


# =========================
# Decode
# =========================
def semantic_logits(stage_logits: list, out_h: int, out_w: int) -> Tensor:
    total = stage_logits[0]
    for item in stage_logits[1:]:
        total = total + item
    return tc.resize_bilinear(total, out_h, out_w)


def decode(
    pyramid: list,
    seed_state: CcnnState,
    t_steps: int,
    params: DecoderParams,
    out_size: tuple[int, int],
    training: bool = False,
    ablation=None,
) -> DecoderOutputs:
    """
    Run the three decoder stages at the resolution of E_1. The first stage takes E_4 as
    its previous S, D and M. ablation is an AblationConfig or None.
    """
    if len(pyramid) != 4 or any(e is None for e in pyramid):
        raise ContractError(f"decode: needs E_1..E_4, got {len(pyramid)} levels")
    widths = {e.shape[1] for e in pyramid}
    if len(widths) != 1:
        raise DimensionError(f"decode: pyramid channel axes differ {sorted(widths)}")
    b, c, h, w = pyramid[0].shape
    e1, e2, e3, e4 = (tc.resize_bilinear(e, h, w) for e in pyramid)

    off = _Switches(ablation)
    sfi_state = state_adapt(seed_state, c, h, w, params.seed_sfi)
    dfi_state = state_adapt(seed_state, c, h, w, params.seed_dfi)

    out = DecoderOutputs()
    s_prev = d_prev = m_prev = e4
    for j in range(DECODER_STAGES):
        if off.sfi:
            s_out = e2
        else:
            s_out, sfi_state = sfi_forward(e1, e2, s_prev, params.sfi[j], sfi_state, t_steps, training, use_mdfe=not off.mdfe)
        if off.dfi:
            d_out = e4
        else:
            d_out, dfi_state = dfi_forward(
                e3, e4, d_prev, params.dfi[j], dfi_state, t_steps, training,
                use_tsa=not off.tsa, use_sa=not off.sa,
            )
        if off.mfe:
            s_prev = d_prev = m_prev = s_out + d_out
        else:
            s_prev, d_prev, m_prev = mfe_forward(s_out, d_out, m_prev, params.mfe[j], training)
        out.s_out.append(s_out)
        out.d_out.append(d_out)
        out.s.append(s_prev)
        out.d.append(d_prev)
        out.m.append(m_prev)
        out.stage_logits.append(nn.conv(m_prev, params.head))

    out.logits = semantic_logits(out.stage_logits, *out_size)
    out.sfi_state, out.dfi_state = sfi_state, dfi_state
    return out


class _Switches:
    def __init__(self, ablation):
        get = (lambda name: bool(getattr(ablation, name, False))) if ablation is not None else (lambda name: False)
        self.sfi = get("disable_sfi")
        self.dfi = get("disable_dfi")
        self.mfe = get("disable_mfe")
        self.mdfe = get("disable_mdfe")
        self.tsa = get("disable_tsa")
        self.sa = get("disable_sa")
