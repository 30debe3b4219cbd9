# src/gradcheck.py
# Finite-difference verification of backward() for each network component at tiny,
# 64-bit shapes. The objective is sum(output * R) for a fixed random R.
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
import pandas as pd

from src import nn
from src import tensor_core as tc
from src.ccnn import CcnnState, ccnn_forward, init_ccnn
from src.config import CcnnConfig
from src.decoder import dfi_forward, init_dfi, init_mfe, init_sfi, mfe_forward, sfi_forward
from src.fusion import ceaef_forward, init_ceaef
from src.supervision import AwlParams, awl_total, cross_entropy
from src.tensor_core import NamedTensorSet, Tensor

logger = logging.getLogger(__name__)

MODULES = ("ccnn", "ceaef", "sfi", "dfi", "mfe", "loss")
TOLERANCE = 1e-4


@dataclass
class Suite:
    name: str
    function: Callable[[NamedTensorSet], Tensor]
    params: NamedTensorSet
    epsilon: float = 1e-5
    max_coords: int | None = None


@dataclass
class GradcheckResult:
    module: str
    max_rel_error: float
    coords: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= TOLERANCE


def _leaf(rng, shape, scale=1.0) -> Tensor:
    return Tensor(rng.normal(0.0, scale, shape), requires_grad=True, dtype=np.float64)


def _objective(out: Tensor, weights: np.ndarray) -> Tensor:
    return tc.sum(out * tc.as_tensor(weights, like=out))


def _as64(tree) -> NamedTensorSet:
    return NamedTensorSet.collect(tree).astype(np.float64)


def _random_state(rng, shape) -> CcnnState:
    def field_value(lo, hi):
        return Tensor(rng.uniform(lo, hi, shape), dtype=np.float64)

    return CcnnState(field_value(-0.5, 0.5), field_value(-0.5, 0.5), field_value(0.0, 1.0), field_value(0.05, 0.95), n=1)


# =========================
# Suites
# =========================
def ccnn_suite(seed: int = 0, channels: int = 3, size: int = 6, t_steps: int = 4) -> Suite:
    rng = np.random.default_rng(seed)
    params = init_ccnn(rng, channels, CcnnConfig(kernel=3))
    tree = {"ccnn": params, "x": _leaf(rng, (1, channels, size, size))}
    named = _as64(tree)
    weights = rng.normal(size=(1, channels, size, size))

    def function(_):
        y_avg, state = ccnn_forward(None, tree["x"], params, t_steps)
        return _objective(y_avg, weights) + _objective(state.f, weights * 0.1)

    return Suite("ccnn", function, named)


def ceaef_suite(seed: int = 0, channels: int = 4, size: int = 8, max_coords: int = 6) -> Suite:
    rng = np.random.default_rng(seed)
    params = init_ceaef(rng, channels, channels, reduction=2)
    tree = {"ceaef": params, "r": _leaf(rng, (1, channels, size, size)), "t": _leaf(rng, (1, channels, size, size))}
    named = _as64(tree)
    weights = rng.normal(size=(1, channels, size, size))

    def function(_):
        return _objective(ceaef_forward(tree["r"], tree["t"], params), weights)

    return Suite("ceaef", function, named, max_coords=max_coords)


def sfi_suite(seed: int = 0, width: int = 8, size: int = 8, t_steps: int = 2, max_coords: int = 4) -> Suite:
    rng = np.random.default_rng(seed)
    params = init_sfi(rng, width, CcnnConfig(kernel=3))
    shape = (1, width, size, size)
    tree = {"sfi": params, "e1": _leaf(rng, shape), "e2": _leaf(rng, shape), "s": _leaf(rng, shape)}
    named = _as64(tree)
    state = _random_state(rng, shape)
    weights = rng.normal(size=shape)

    def function(_):
        out, _state = sfi_forward(tree["e1"], tree["e2"], tree["s"], params, state, t_steps)
        return _objective(out, weights)

    return Suite("sfi", function, named, max_coords=max_coords)


def dfi_suite(seed: int = 0, width: int = 8, size: int = 8, t_steps: int = 2, max_coords: int = 4) -> Suite:
    rng = np.random.default_rng(seed)
    params = init_dfi(rng, width, size, size, CcnnConfig(kernel=3), reduction=2)
    shape = (1, width, size, size)
    tree = {"dfi": params, "e3": _leaf(rng, shape), "e4": _leaf(rng, shape), "d": _leaf(rng, shape)}
    named = _as64(tree)
    state = _random_state(rng, shape)
    weights = rng.normal(size=shape)

    def function(_):
        out, _state = dfi_forward(tree["e3"], tree["e4"], tree["d"], params, state, t_steps)
        return _objective(out, weights)

    return Suite("dfi", function, named, max_coords=max_coords)


def mfe_suite(seed: int = 0, width: int = 8, size: int = 8, max_coords: int = 6) -> Suite:
    rng = np.random.default_rng(seed)
    params = init_mfe(rng, width, reduction=2)
    params.d.data = np.array([0.3])
    params.g.data = np.array([-0.4])
    shape = (1, width, size, size)
    tree = {"mfe": params, "s_out": _leaf(rng, shape), "d_out": _leaf(rng, shape), "m": _leaf(rng, shape)}
    named = _as64(tree)
    w_s, w_d, w_m = (rng.normal(size=shape) for _ in range(3))

    def function(_):
        s, d, m = mfe_forward(tree["s_out"], tree["d_out"], tree["m"], params)
        return _objective(s, w_s) + _objective(d, w_d) + _objective(m, w_m)

    return Suite("mfe", function, named, max_coords=max_coords)


def loss_suite(seed: int = 0, n_classes: int = 4, size: int = 4) -> Suite:
    rng = np.random.default_rng(seed)
    logits = [_leaf(rng, (1, 2, size, size)) for _ in range(6)] + [_leaf(rng, (1, n_classes, size, size))]
    awl = AwlParams(_leaf(rng, (7,), 0.5))
    binary = rng.integers(0, 2, (1, size, size))
    semantic = rng.integers(0, n_classes, (1, size, size))
    named = NamedTensorSet.collect({"logits": logits, "awl": awl})

    def function(_):
        losses = [cross_entropy(z, binary) for z in logits[:6]] + [cross_entropy(logits[6], semantic)]
        return awl_total(losses, awl)

    return Suite("loss", function, named)


SUITES = {
    "ccnn": ccnn_suite,
    "ceaef": ceaef_suite,
    "sfi": sfi_suite,
    "dfi": dfi_suite,
    "mfe": mfe_suite,
    "loss": loss_suite,
}


# =========================
# Running
# =========================
def coordinate_count(suite: Suite) -> int:
    sizes = [t.data.size for t in suite.params.trainable().values()]
    if suite.max_coords is None:
        return int(sum(sizes))
    return int(sum(min(s, suite.max_coords) for s in sizes))


def run_suite(suite: Suite, seed: int = 0) -> GradcheckResult:
    start = time.perf_counter()
    err = tc.finite_diff_check(suite.function, suite.params, suite.epsilon, max_coords=suite.max_coords, seed=seed)
    result = GradcheckResult(suite.name, err, coordinate_count(suite), time.perf_counter() - start)
    logger.info(
        "gradcheck %s: max rel error %.3e over %d coords (%s)",
        suite.name, err, result.coords, "pass" if result.passed else "FAIL",
    )
    return result


def run_gradcheck(modules=MODULES, seed: int = 0) -> pd.DataFrame:
    rows = []
    for name in modules:
        if name not in SUITES:
            raise ValueError(f"unknown gradcheck module '{name}', expected one of {MODULES}")
        r = run_suite(SUITES[name](seed), seed)
        rows.append({"module": r.module, "max_rel_error": r.max_rel_error, "coords": r.coords, "seconds": r.seconds, "pass": r.passed})
    return pd.DataFrame(rows, columns=["module", "max_rel_error", "coords", "seconds", "pass"])
