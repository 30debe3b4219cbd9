# src/config.py
import os
from dataclasses import dataclass, field, fields, is_dataclass

# =========================
# Defaults
# =========================
CCNN_MODES = ("full", "nolinking", "bypass")
LOSS_HEADS = ("bin1", "bin2", "bin3", "bou1", "bou2", "bou3", "se")
ENCODER_STRIDES = (4, 2, 2, 2)
DECODER_STAGES = 3
THREADS_ENV = "BIMII_THREADS"


class ConfigError(ValueError):
    pass


@dataclass
class CcnnConfig:
    alpha_f: float = 0.1
    alpha_l: float = 1.0
    alpha_e: float = 0.4
    v_e: float = 1.0
    beta: float = 0.5
    kernel: int = 7
    dilation: int = 1
    mode: str = "full"
    t_steps_train: int = 1
    t_steps_finetune: int = 4


@dataclass
class EncoderConfig:
    channels: tuple = (32, 64, 128, 256)
    blocks_per_stage: int = 2


@dataclass
class CeaefConfig:
    reduction: int = 4


@dataclass
class DecoderConfig:
    width: int = 64
    stages: int = DECODER_STAGES


@dataclass
class AblationConfig:
    disable_ceaef: bool = False
    disable_sfi: bool = False
    disable_dfi: bool = False
    disable_mfe: bool = False
    disable_mdfe: bool = False  # inside SFI
    disable_tsa: bool = False  # inside DFI
    disable_sa: bool = False  # inside DFI
    ccnn_mode: str = ""  # empty = keep ccnn.mode
    loss_mask: tuple = LOSS_HEADS
    fixed_loss_weights: tuple = ()


@dataclass
class StageConfig:
    epochs: int = 1
    batch_size: int = 2
    lr: float = 1e-4
    weight_decay: float = 5e-4
    clip_norm: float = 0.0  # 0 = off


@dataclass
class AugmentConfig:
    random_crop: bool = True
    crop_fraction: float = 0.75
    hflip: bool = True
    hflip_prob: float = 0.5


@dataclass
class OptimConfig:
    beta1: float = 0.0  # no first-moment average: the update follows the current gradient only
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class RunConfig:
    seed: int = 0
    n_classes: int = 9
    image_h: int = 64
    image_w: int = 64
    precision: int = 32
    data_root: str = "data"
    out_dir: str = "runs"
    ccnn: CcnnConfig = field(default_factory=CcnnConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    ceaef: CeaefConfig = field(default_factory=CeaefConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    stage1: StageConfig = field(default_factory=lambda: StageConfig(epochs=75, batch_size=2, lr=1e-4, weight_decay=5e-4))
    stage2: StageConfig = field(default_factory=lambda: StageConfig(epochs=10, batch_size=1, lr=1e-5, weight_decay=5e-4, clip_norm=20.0))


# flat view for the dashboard sidebar
DEFAULTS = {
    "ccnn": {"alpha_f": 0.1, "alpha_l": 1.0, "alpha_e": 0.4, "v_e": 1.0, "beta": 0.5, "kernel": 7, "t_steps_train": 1, "t_steps_finetune": 4},
    # stage 1 = direct training, stage 2 = fine-tuning
    "stage1": {"batch_size": 2, "lr": 1e-4, "weight_decay": 5e-4},
    "stage2": {"batch_size": 1, "lr": 1e-5, "weight_decay": 5e-4, "clip_norm": 20.0},
}


# =========================
# Validation
# =========================
def validate(cfg: RunConfig) -> RunConfig:
    c = cfg.ccnn
    if min(c.alpha_f, c.alpha_l, c.alpha_e) <= 0:
        raise ConfigError("ccnn.alpha_* must be > 0")
    if c.v_e < 0:
        raise ConfigError("ccnn.v_e must be >= 0")
    if c.kernel < 1 or c.kernel % 2 == 0:
        raise ConfigError(f"ccnn.kernel must be odd, got {c.kernel}")
    if c.dilation < 1:
        raise ConfigError("ccnn.dilation must be >= 1")
    if c.mode not in CCNN_MODES:
        raise ConfigError(f"ccnn.mode must be one of {CCNN_MODES}, got '{c.mode}'")
    if c.t_steps_train < 1 or c.t_steps_finetune < 1:
        raise ConfigError("ccnn.t_steps_* must be >= 1")

    ch = tuple(cfg.encoder.channels)
    if len(ch) != 4 or any(b <= a for a, b in zip(ch, ch[1:])) or ch[0] < 1:
        raise ConfigError(f"encoder.channels must be 4 strictly increasing positive ints, got {ch}")
    if cfg.encoder.blocks_per_stage < 1:
        raise ConfigError("encoder.blocks_per_stage must be >= 1")
    if cfg.decoder.stages != DECODER_STAGES:
        raise ConfigError(f"decoder.stages is fixed at {DECODER_STAGES}")
    if cfg.decoder.width < 2 or cfg.decoder.width % 2:
        raise ConfigError("decoder.width must be a positive even int")
    if cfg.ceaef.reduction < 1:
        raise ConfigError("ceaef.reduction must be >= 1")
    if cfg.n_classes < 2:
        raise ConfigError("n_classes must be >= 2")
    if cfg.image_h % 32 or cfg.image_w % 32 or cfg.image_h < 32 or cfg.image_w < 32:
        raise ConfigError(f"image size must be divisible by 32, got {cfg.image_h}x{cfg.image_w}")
    if cfg.precision not in (32, 64):
        raise ConfigError("precision must be 32 or 64")
    for name in ("stage1", "stage2"):
        s = getattr(cfg, name)
        if s.lr <= 0 or s.weight_decay < 0 or s.batch_size < 1 or s.epochs < 0:
            raise ConfigError(f"{name}: rates must be positive, batch >= 1")
        if s.clip_norm < 0:
            raise ConfigError(f"{name}.clip_norm must be > 0 (or 0 for off)")
    if not 0 < cfg.augment.crop_fraction <= 1:
        raise ConfigError("augment.crop_fraction must be in (0, 1]")
    o = cfg.optim
    if not (0 <= o.beta1 < 1 and 0 <= o.beta2 < 1) or o.eps <= 0:
        raise ConfigError("optim.beta1 / optim.beta2 must be in [0, 1) and optim.eps > 0")
    validate_ablation(cfg.ablation)
    return cfg


def validate_ablation(a: AblationConfig) -> AblationConfig:
    if a.ccnn_mode and a.ccnn_mode not in CCNN_MODES:
        raise ConfigError(f"ablation.ccnn_mode must be one of {CCNN_MODES}, got '{a.ccnn_mode}'")
    if a.disable_sfi and a.disable_mdfe:
        raise ConfigError("ablation.disable_mdfe conflicts with ablation.disable_sfi (the whole module is already replaced)")
    if a.disable_dfi and (a.disable_tsa or a.disable_sa):
        raise ConfigError("ablation.disable_tsa/disable_sa conflict with ablation.disable_dfi (the whole module is already replaced)")
    unknown = [h for h in a.loss_mask if h not in LOSS_HEADS]
    if unknown:
        raise ConfigError(f"ablation.loss_mask has unknown heads {unknown}")
    if not a.loss_mask:
        raise ConfigError("ablation.loss_mask must keep at least one head")
    if a.fixed_loss_weights:
        if len(a.fixed_loss_weights) != len(LOSS_HEADS):
            raise ConfigError("ablation.fixed_loss_weights needs 7 values (bin1..3, bou1..3, se)")
        if any(w < 0 for w in a.fixed_loss_weights):
            raise ConfigError("ablation.fixed_loss_weights must be non-negative")
        if tuple(a.loss_mask) != LOSS_HEADS:
            raise ConfigError("ablation.fixed_loss_weights conflicts with ablation.loss_mask; zero the weight instead")
    return a


# =========================
# key = value files
# =========================
def _coerce(raw: str, current, key: str):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            sample = current[0] if current else None
            if key.endswith("loss_mask"):
                return tuple(items)
            if isinstance(sample, int) and not key.endswith("weights"):
                return tuple(int(s) for s in items)
            return tuple(float(s) for s in items)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for '{key}': {raw!r}") from None


def apply_overrides(cfg: RunConfig, items: dict[str, str]) -> RunConfig:
    for key, raw in items.items():
        target = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            if not hasattr(target, part) or not is_dataclass(getattr(target, part)):
                raise ConfigError(f"unknown config key '{key}'")
            target = getattr(target, part)
        leaf = parts[-1]
        if not is_dataclass(target) or leaf not in {f.name for f in fields(target)} or is_dataclass(getattr(target, leaf)):
            raise ConfigError(f"unknown config key '{key}'")
        setattr(target, leaf, _coerce(raw, getattr(target, leaf), key))
    return cfg


def parse_config_text(text: str) -> dict[str, str]:
    items: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in items:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        items[key] = value
    return items


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as f:
        text = f.read()
    return validate(apply_overrides(RunConfig(), parse_config_text(text)))


def _flatten(obj, prefix=""):
    for f in fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if is_dataclass(value):
            yield from _flatten(value, key + ".")
        else:
            yield key, value


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for key, value in _flatten(cfg):
        if isinstance(value, tuple):
            value = ", ".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def worker_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


def stage_t_steps(cfg: RunConfig, stage: str) -> int:
    """CCNN iterations per layer: direct training for stage1, fine-tuning for stage2."""
    return cfg.ccnn.t_steps_train if stage == "stage1" else cfg.ccnn.t_steps_finetune
