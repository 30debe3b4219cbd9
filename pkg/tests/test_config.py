# tests/test_config.py
from pathlib import Path

import pytest

from src.config import (
    DEFAULTS,
    LOSS_HEADS,
    AblationConfig,
    ConfigError,
    RunConfig,
    apply_overrides,
    dump_config,
    load_config,
    parse_config_text,
    stage_t_steps,
    validate,
    validate_ablation,
    worker_threads,
)


class TestDefaults:
    def test_defaults_validate(self):
        validate(RunConfig())

    def test_ccnn_constants(self):
        c = RunConfig().ccnn
        assert (c.alpha_f, c.alpha_l, c.alpha_e, c.v_e, c.beta) == (0.1, 1.0, 0.4, 1.0, 0.5)
        assert (c.kernel, c.t_steps_train, c.t_steps_finetune) == (7, 1, 4)

    def test_sidebar_view_matches(self):
        cfg = RunConfig()
        for key, value in DEFAULTS["ccnn"].items():
            assert getattr(cfg.ccnn, key) == value
        for stage in ("stage1", "stage2"):
            for key, value in DEFAULTS[stage].items():
                assert getattr(getattr(cfg, stage), key) == value

    def test_stage_iterations(self):
        cfg = RunConfig()
        assert stage_t_steps(cfg, "stage1") == 1
        assert stage_t_steps(cfg, "stage2") == 4


class TestParsing:
    def test_comments_and_blanks(self):
        items = parse_config_text("# header\n\nseed = 3  # inline\nccnn.beta=0.25\n")
        assert items == {"seed": "3", "ccnn.beta": "0.25"}

    def test_overrides_coerce_types(self):
        cfg = apply_overrides(RunConfig(), {
            "seed": "7",
            "ccnn.beta": "0.25",
            "encoder.channels": "8, 16, 32, 64",
            "augment.hflip": "off",
            "ablation.loss_mask": "bin1, se",
            "ablation.ccnn_mode": "bypass",
        })
        assert cfg.seed == 7
        assert cfg.ccnn.beta == 0.25
        assert cfg.encoder.channels == (8, 16, 32, 64)
        assert cfg.augment.hflip is False
        assert cfg.ablation.loss_mask == ("bin1", "se")
        assert cfg.ablation.ccnn_mode == "bypass"

    def test_round_trip(self, tmp_path, make_config):
        cfg = make_config(ccnn__beta=0.3, ablation__disable_tsa="true", ablation__fixed_loss_weights="1, 1, 1, 1, 1, 1, 3")
        path = tmp_path / "run.conf"
        path.write_text(dump_config(cfg), encoding="utf-8")
        assert load_config(path) == cfg

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config_text("seed = 1\nnot a pair\n")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config_text("seed = 1\nseed = 2\n")

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            apply_overrides(RunConfig(), {"ccnn.gamma": "1"})
        with pytest.raises(ConfigError, match="unknown config key"):
            apply_overrides(RunConfig(), {"ccnn": "1"})

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="bad value"):
            apply_overrides(RunConfig(), {"stage1.epochs": "many"})
        with pytest.raises(ConfigError, match="bad value"):
            apply_overrides(RunConfig(), {"augment.hflip": "maybe"})


class TestValidation:
    @pytest.mark.parametrize("key,value", [
        ("ccnn.kernel", "4"),
        ("ccnn.alpha_f", "0"),
        ("ccnn.mode", "spiking"),
        ("ccnn.t_steps_finetune", "0"),
        ("encoder.channels", "8, 8, 16, 32"),
        ("encoder.channels", "8, 16, 32"),
        ("decoder.width", "7"),
        ("image_h", "48"),
        ("n_classes", "1"),
        ("precision", "16"),
        ("stage1.lr", "0"),
        ("augment.crop_fraction", "1.5"),
        ("optim.beta1", "1.0"),
        ("optim.eps", "0"),
    ])
    def test_rejected(self, key, value):
        with pytest.raises(ConfigError):
            validate(apply_overrides(RunConfig(), {key: value}))

    def test_sfi_and_mdfe_conflict(self):
        with pytest.raises(ConfigError, match="conflicts"):
            validate_ablation(AblationConfig(disable_sfi=True, disable_mdfe=True))

    def test_dfi_and_inner_switches_conflict(self):
        with pytest.raises(ConfigError, match="conflict"):
            validate_ablation(AblationConfig(disable_dfi=True, disable_tsa=True))
        with pytest.raises(ConfigError, match="conflict"):
            validate_ablation(AblationConfig(disable_dfi=True, disable_sa=True))

    def test_fixed_weights_need_full_mask(self):
        with pytest.raises(ConfigError):
            validate_ablation(AblationConfig(loss_mask=("se",), fixed_loss_weights=(1.0,) * 7))

    def test_fixed_weights_count(self):
        with pytest.raises(ConfigError, match="7 values"):
            validate_ablation(AblationConfig(fixed_loss_weights=(1.0, 2.0)))

    def test_loss_mask_names(self):
        with pytest.raises(ConfigError, match="unknown heads"):
            validate_ablation(AblationConfig(loss_mask=("bin1", "edges")))
        with pytest.raises(ConfigError):
            validate_ablation(AblationConfig(loss_mask=()))

    def test_independent_switches_combine(self):
        validate_ablation(AblationConfig(disable_ceaef=True, disable_mfe=True, disable_tsa=True, ccnn_mode="nolinking"))
        assert AblationConfig().loss_mask == LOSS_HEADS


class TestThreads:
    def test_default(self, monkeypatch):
        monkeypatch.delenv("BIMII_THREADS", raising=False)
        assert worker_threads() == 1

    def test_from_environment(self, monkeypatch):
        monkeypatch.setenv("BIMII_THREADS", "3")
        assert worker_threads() == 3

    def test_not_an_integer(self, monkeypatch):
        monkeypatch.setenv("BIMII_THREADS", "many")
        with pytest.raises(ConfigError):
            worker_threads()


class TestDeskScaleFile:
    path = Path(__file__).resolve().parents[1] / "configs" / "desk_scale.conf"

    def test_loads(self):
        cfg = load_config(self.path)
        assert cfg.n_classes == 4 and (cfg.image_h, cfg.image_w) == (64, 64)
        assert stage_t_steps(cfg, "stage1") == 1 and stage_t_steps(cfg, "stage2") == 4

    def test_rates_keep_the_tenfold_drop(self):
        cfg = load_config(self.path)
        assert cfg.stage1.lr == pytest.approx(2e-3)
        assert cfg.stage2.lr == pytest.approx(cfg.stage1.lr / 10)

    def test_rate_change_is_commented(self):
        lines = self.path.read_text(encoding="utf-8").splitlines()
        at = next(i for i, line in enumerate(lines) if line.startswith("stage1.lr"))
        block = lines[max(0, at - 4):at]
        assert any(line.startswith("#") and "1e-4" in line for line in block)
