# tests/test_readme.py
from pathlib import Path

README = Path(__file__).resolve().parents[1] / "README.md"


class TestReadme:
    def test_reference_scores_disclaimed(self):
        text = README.read_text(encoding="utf-8")
        assert "mAcc 70.5" in text and "mIoU 58.4" in text
        assert "NOT reproducible" in text

    def test_names_the_substitute_suite(self):
        text = README.read_text(encoding="utf-8")
        for item in ("gradient checks", "CCNN dynamics", "metrics oracle", "closed-form loss",
                     "thermal-zeroed control", "ablation switches", "checkpoint persistence"):
            assert item in text, item
