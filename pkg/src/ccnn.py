# src/ccnn.py
# Continuous-coupled neuron layer: single step, T-step averaged forward, and the
# state threading that turns a stack of layers into one lineage.
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from src import nn
from src import tensor_core as tc
from src.config import CcnnConfig
from src.tensor_core import ContractError, DimensionError, Tensor

Y_CLAMP = 1e-6


@dataclass
class CcnnParams:
    conv_m: Tensor
    conv_w: Tensor
    alpha_f: float = 0.1
    alpha_l: float = 1.0
    alpha_e: float = 0.4
    v_e: float = 1.0
    beta: float = 0.5
    dilation: int = 1
    mode: str = "full"  # full | nolinking | bypass

    @property
    def padding(self) -> int:
        return self.dilation * (self.conv_m.shape[-1] // 2)


@dataclass
class CcnnState:
    f: Tensor
    l: Tensor  # noqa: E741
    e: Tensor
    y: Tensor
    n: int = 0
    u: Tensor | None = None  # modulation of the last step, diagnostics only

    @property
    def shape(self) -> tuple:
        return self.f.shape


def init_ccnn(rng: np.random.Generator, channels: int, cfg: CcnnConfig | None = None) -> CcnnParams:
    cfg = cfg or CcnnConfig()
    k = cfg.kernel
    bound = 1.0 / np.sqrt(channels * k * k)
    return CcnnParams(
        conv_m=nn.param(rng.uniform(-bound, bound, (channels, channels, k, k))),
        conv_w=nn.param(rng.uniform(-bound, bound, (channels, channels, k, k))),
        alpha_f=cfg.alpha_f,
        alpha_l=cfg.alpha_l,
        alpha_e=cfg.alpha_e,
        v_e=cfg.v_e,
        beta=cfg.beta,
        dilation=cfg.dilation,
        mode=cfg.mode,
    )


def zero_state(shape: tuple, dtype=np.float32) -> CcnnState:
    z = np.zeros(shape, dtype=dtype)
    return CcnnState(Tensor(z), Tensor(z), Tensor(z), Tensor(z), n=0)


def detach_state(state: CcnnState) -> CcnnState:
    return CcnnState(state.f.detach(), state.l.detach(), state.e.detach(), state.y.detach(), state.n)


def _coupling(y: Tensor, kernel: Tensor, params: CcnnParams) -> Tensor:
    return tc.conv2d(y, kernel, None, 1, params.padding, params.dilation, 1)


# =========================
# Dynamics
# =========================
def ccnn_step(state: CcnnState | None, x: Tensor, params: CcnnParams) -> CcnnState:
    """
    One iteration, in the order F, L, U, E, Y:
      F <- e^-af F + M*Y + x
      L <- e^-al L + W*Y
      U  = F (1 + beta L)
      E <- e^-ae E + v_e Y
      Y  = sigmoid(U - E)
    In nolinking mode the feedback coupling M*Y is removed and beta is 0, so U = F.
    """
    if state is None:
        state = zero_state(x.shape, x.dtype)
    if x.shape != state.shape:
        raise DimensionError(f"ccnn_step: input shape {x.shape} != state shape {state.shape}")
    y_prev = state.y
    nolinking = params.mode == "nolinking"

    f = state.f * math.exp(-params.alpha_f) + x
    if not nolinking:
        f = f + _coupling(y_prev, params.conv_m, params)
    l = state.l * math.exp(-params.alpha_l) + _coupling(y_prev, params.conv_w, params)  # noqa: E741
    u = f if nolinking else f * (l * params.beta + 1.0)
    e = state.e * math.exp(-params.alpha_e) + y_prev * params.v_e
    y = tc.sigmoid(u - e)
    return CcnnState(f, l, e, y, state.n + 1, u)


def ccnn_forward(state: CcnnState | None, x: Tensor, params: CcnnParams, t_steps: int) -> tuple[Tensor, CcnnState]:
    """Run t_steps iterations on the same drive and return (mean of the T outputs, final state)."""
    if t_steps < 1:
        raise ContractError(f"t_steps must be >= 1, got {t_steps}")
    if state is None:
        state = zero_state(x.shape, x.dtype)
    if params.mode == "bypass":
        return x, state
    total = None
    for _ in range(t_steps):
        state = ccnn_step(state, x, params)
        total = state.y if total is None else total + state.y
    return total * (1.0 / t_steps), state


# =========================
# State threading
# =========================
def state_merge(a: CcnnState, b: CcnnState) -> CcnnState:
    if a.shape != b.shape:
        raise ContractError(f"state_merge: shapes {a.shape} and {b.shape} differ")
    if a.n != b.n:
        raise ContractError(f"state_merge: iteration counts {a.n} and {b.n} differ")
    return CcnnState(
        (a.f + b.f) * 0.5,
        (a.l + b.l) * 0.5,
        (a.e + b.e) * 0.5,
        (a.y + b.y) * 0.5,
        a.n,
    )


@dataclass
class StateAdapterParams:
    f: nn.ConvParams
    l: nn.ConvParams  # noqa: E741
    e: nn.ConvParams
    y: nn.ConvParams


def init_state_adapter(rng, c_in: int, c_out: int) -> StateAdapterParams:
    return StateAdapterParams(*(nn.init_conv(rng, c_in, c_out, 1) for _ in range(4)))


def state_adapt(state: CcnnState, target_channels: int, target_h: int, target_w: int, adapter: StateAdapterParams) -> CcnnState:
    """Resize every field, project its channels through the adapter, keep Y inside (0, 1)."""
    out = {}
    for name in ("f", "l", "e", "y"):
        conv = getattr(adapter, name)
        if conv.weight.shape[1] != state.shape[1] or conv.weight.shape[0] != target_channels:
            raise DimensionError(
                f"state_adapt: adapter '{name}' maps {conv.weight.shape[1]}->{conv.weight.shape[0]} channels, "
                f"state has {state.shape[1]}, target {target_channels}"
            )
        field_value = tc.resize_bilinear(getattr(state, name), target_h, target_w)
        out[name] = nn.conv(field_value, conv)
    y = out["y"]
    if state.n > 0:
        # a lineage that has stepped keeps Y strictly inside (0, 1); the start state stays all-zero
        y = tc.clip(y, Y_CLAMP, 1.0 - Y_CLAMP)
    return CcnnState(out["f"], out["l"], out["e"], y, state.n)


def with_mode(params: CcnnParams, mode: str) -> CcnnParams:
    return replace(params, mode=mode)


# =========================
# Scalar trajectory (inspection)
# =========================
def scalar_trajectory(
    t_steps: int,
    drive: float = 1.0,
    m: float = 0.0,
    w: float = 0.0,
    cfg: CcnnConfig | None = None,
    mode: str = "full",
) -> pd.DataFrame:
    """1x1 neuron with 1x1 couplings m, w driven by a constant input; one row per step."""
    cfg = cfg or CcnnConfig()
    params = CcnnParams(
        conv_m=Tensor(np.full((1, 1, 1, 1), m, dtype=np.float64)),
        conv_w=Tensor(np.full((1, 1, 1, 1), w, dtype=np.float64)),
        alpha_f=cfg.alpha_f,
        alpha_l=cfg.alpha_l,
        alpha_e=cfg.alpha_e,
        v_e=cfg.v_e,
        beta=cfg.beta,
        mode=mode,
    )
    x = Tensor(np.full((1, 1, 1, 1), drive, dtype=np.float64))
    state = zero_state(x.shape, np.float64)
    rows = []
    running = 0.0
    for _ in range(t_steps):
        state = ccnn_step(state, x, params)
        running += state.y.item()
        rows.append({
            "n": state.n,
            "F": state.f.item(),
            "L": state.l.item(),
            "E": state.e.item(),
            "U": state.u.item(),
            "Y": state.y.item(),
            "Y_avg": running / state.n,
        })
    return pd.DataFrame(rows)
