# src/ablation.py
# Structural toggles: a model with selected components replaced, parameters shared.
from __future__ import annotations

import logging
from dataclasses import fields, is_dataclass, replace

from src.ccnn import CcnnParams
from src.config import LOSS_HEADS, AblationConfig, validate_ablation
from src.model import Model, ModelParams
from src.tensor_core import Tensor

logger = logging.getLogger(__name__)

STRUCTURAL_TOGGLES = ("disable_ceaef", "disable_sfi", "disable_dfi", "disable_mfe", "disable_mdfe", "disable_tsa", "disable_sa")


def _remap(obj, fn):
    """Rebuild the dataclass/list tree around the same tensors, applying fn to every node."""
    if isinstance(obj, Tensor):
        return obj
    if is_dataclass(obj) and not isinstance(obj, type):
        changes = {f.name: _remap(getattr(obj, f.name), fn) for f in fields(obj)}
        return fn(replace(obj, **changes))
    if isinstance(obj, list):
        return [_remap(item, fn) for item in obj]
    return obj


def with_ccnn_mode(params: ModelParams, mode: str) -> ModelParams:
    return _remap(params, lambda node: replace(node, mode=mode) if isinstance(node, CcnnParams) else node)


def apply_ablation(model: Model, ablation: AblationConfig) -> Model:
    """Same parameters, new wiring. Raises ConfigError on conflicting toggles."""
    validate_ablation(ablation)
    params = model.params
    if ablation.ccnn_mode:
        params = with_ccnn_mode(params, ablation.ccnn_mode)
    active = [name for name in STRUCTURAL_TOGGLES if getattr(ablation, name)]
    if active or ablation.ccnn_mode:
        logger.info("ablation: %s ccnn_mode=%s", ",".join(active) or "-", ablation.ccnn_mode or "-")
    return Model(params=params, config=model.config, ablation=ablation)


def single_toggles() -> list[tuple[str, AblationConfig]]:
    """One AblationConfig per toggle, each changing exactly one thing."""
    out = [(name, AblationConfig(**{name: True})) for name in STRUCTURAL_TOGGLES]
    out += [(f"ccnn_mode={mode}", AblationConfig(ccnn_mode=mode)) for mode in ("nolinking", "bypass")]
    out += [(f"mask-{head}", AblationConfig(loss_mask=tuple(h for h in LOSS_HEADS if h != head))) for head in LOSS_HEADS]
    out.append(("fixed_weights", AblationConfig(fixed_loss_weights=(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 3.0))))
    return out
