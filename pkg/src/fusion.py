# src/fusion.py
# Cross explicit attention-enhanced fusion of one RGB/thermal feature level.
from __future__ import annotations

from dataclasses import dataclass

from src import nn
from src import tensor_core as tc
from src.tensor_core import DimensionError, Tensor


@dataclass
class CeaefParams:
    ca_mlp_rgb: nn.MlpParams  # C -> C/r -> C
    ca_mlp_th: nn.MlpParams
    gate_mlp_main: nn.MlpParams  # 2C -> 2C/r -> 2C
    gate_mlp_comp: nn.MlpParams
    dw_main: nn.ConvParams  # depthwise 3x3 on 2C
    dw_comp: nn.ConvParams
    dw_fi: nn.SeparableParams  # depthwise 2C then pointwise 2C -> C
    dw_fc: nn.SeparableParams
    ds_fi: nn.SeparableParams  # C -> 1
    ds_fc: nn.SeparableParams
    out_cbl: nn.CblParams  # 1x1, C -> C_dec


def init_ceaef(rng, channels: int, out_channels: int, reduction: int = 4) -> CeaefParams:
    c, c2 = channels, 2 * channels
    return CeaefParams(
        ca_mlp_rgb=nn.init_mlp(rng, c, c // reduction, c),
        ca_mlp_th=nn.init_mlp(rng, c, c // reduction, c),
        gate_mlp_main=nn.init_mlp(rng, c2, c2 // reduction, c2),
        gate_mlp_comp=nn.init_mlp(rng, c2, c2 // reduction, c2),
        dw_main=nn.init_conv(rng, c2, c2, 3, groups=c2),
        dw_comp=nn.init_conv(rng, c2, c2, 3, groups=c2),
        dw_fi=nn.init_separable(rng, c2, c),
        dw_fc=nn.init_separable(rng, c2, c),
        ds_fi=nn.init_separable(rng, c, 1),
        ds_fc=nn.init_separable(rng, c, 1),
        out_cbl=nn.init_cbl(rng, c, out_channels, kernel=1),
    )


def channel_descriptor(x: Tensor, mlp: nn.MlpParams) -> Tensor:
    """GAP then MLP, BCHW -> BC11. No gate nonlinearity here."""
    if x.shape[1] != mlp.fc1.weight.shape[1]:
        raise DimensionError(f"channel_descriptor: channel axis {x.shape[1]} != MLP input {mlp.fc1.weight.shape[1]}")
    return nn.pooled_mlp(tc.global_pool(x, "average"), mlp)


def _gates(a: Tensor, b: Tensor, dw: nn.ConvParams, mlp: nn.MlpParams) -> tuple[Tensor, Tensor]:
    c = a.shape[1]
    pooled = tc.global_pool(nn.conv(tc.concat([a, b], axis=1), dw), "max")
    g = tc.sigmoid(nn.pooled_mlp(pooled, mlp))
    return tc.narrow(g, 1, 0, c), tc.narrow(g, 1, c, c)


def ceaef_forward(
    r_i: Tensor,
    t_i: Tensor,
    params: CeaefParams,
    training: bool = False,
    trace: dict | None = None,
) -> Tensor:
    """Fuse R_i and T_i into E_i. Intermediates go into trace when a dict is passed."""
    if r_i.shape != t_i.shape:
        raise DimensionError(f"ceaef: rgb {r_i.shape} and thermal {t_i.shape} differ")
    c = r_i.shape[1]

    # complementary mask from the two channel descriptors
    r = channel_descriptor(r_i, params.ca_mlp_rgb)
    t = channel_descriptor(t_i, params.ca_mlp_th)
    mask = tc.sigmoid(r * t * float(c))
    inv = 1.0 - mask
    r_prime, t_prime = r_i * mask, t_i * mask
    r_dot, t_dot = r_i * inv, t_i * inv

    gate_ri, gate_ti = _gates(r_prime, t_prime, params.dw_main, params.gate_mlp_main)
    gate_rc, gate_tc = _gates(r_dot, t_dot, params.dw_comp, params.gate_mlp_comp)
    r_int, t_int = r_prime * gate_ri, t_prime * gate_ti
    r_comp, t_comp = r_dot * gate_rc, t_dot * gate_tc

    # cross
    f_i = nn.separable(tc.concat([r_int, t_comp], axis=1), params.dw_fi) + r_dot
    f_c = nn.separable(tc.concat([r_comp, t_int], axis=1), params.dw_fc) + t_dot

    # spatial selection
    v_fi, v_fc = tc.softmax_pair(nn.separable(f_i, params.ds_fi), nn.separable(f_c, params.ds_fc))
    e_i = nn.cbl(f_i * v_fi + f_c * v_fc, params.out_cbl, training)

    if trace is not None:
        trace.update(
            mask=mask, r_prime=r_prime, t_prime=t_prime, r_dot=r_dot, t_dot=t_dot,
            f_i=f_i, f_c=f_c, v_fi=v_fi, v_fc=v_fc,
        )
    return e_i


def additive_fusion(r_i: Tensor, t_i: Tensor, params: CeaefParams, training: bool = False) -> Tensor:
    """Stand-in with the fusion removed: elementwise sum projected by the same output CBL."""
    if r_i.shape != t_i.shape:
        raise DimensionError(f"additive_fusion: rgb {r_i.shape} and thermal {t_i.shape} differ")
    return nn.cbl(r_i + t_i, params.out_cbl, training)


def fuse_pyramid(
    rgb_features: list,
    thermal_features: list,
    levels: list,
    disabled: bool = False,
    training: bool = False,
) -> list:
    if not (len(rgb_features) == len(thermal_features) == len(levels)):
        raise DimensionError(
            f"fuse_pyramid: {len(rgb_features)} rgb levels, {len(thermal_features)} thermal, {len(levels)} fusers"
        )
    fuse = additive_fusion if disabled else ceaef_forward
    return [fuse(r, t, p, training) for r, t, p in zip(rgb_features, thermal_features, levels)]
