# tests/test_export.py
from io import BytesIO

import numpy as np
import openpyxl
import pandas as pd
import pytest

from conftest import tiny_config
from src.config import LOSS_HEADS
from src.export import (
    BAND_COL,
    BAND_COLOURS,
    add_bands,
    confusion_frame,
    epoch_log_to_excel_bytes,
    metrics_frame,
    metrics_to_excel_bytes,
    to_excel_bytes_multi_sheets,
)
from src.metrics import metrics
from src.report_export import (
    build_report_tables,
    config_highlights,
    export_run_report_excel_bytes,
    export_run_report_pdf_bytes,
    final_losses,
)


@pytest.fixture
def report():
    pred = np.array([[0, 0, 1, 2], [1, 1, 2, 2], [3, 3, 3, 0], [3, 2, 1, 0]])
    gt = np.array([[0, 1, 1, 2], [1, 1, 2, 2], [3, 3, 3, 3], [0, 2, 1, 0]])
    return metrics(pred, gt, 4)


@pytest.fixture
def log():
    rows = []
    for stage, epochs in (("stage1", 3), ("stage2", 2)):
        for epoch in range(1, epochs + 1):
            rows.append({"stage": stage, "epoch": epoch, "total": 5.0 / epoch, **{h: 1.0 / epoch for h in LOSS_HEADS}})
    return pd.DataFrame(rows)


def workbook(data: bytes):
    return openpyxl.load_workbook(BytesIO(data))


class TestFrames:
    def test_bands_skip_summary_rows(self, report):
        frame = metrics_frame(report)
        assert list(frame.columns) == ["class", "Acc", "IoU", BAND_COL]
        assert list(frame[BAND_COL].iloc[-2:]) == ["", ""]
        assert set(frame[BAND_COL].iloc[:-2]) <= {"RED", "ORANGE", "YELLOW", "GREEN"}

    def test_bands_from_csv(self, report, tmp_path):
        report.to_csv(tmp_path / "m.csv")
        frame = add_bands(pd.read_csv(tmp_path / "m.csv"))
        assert list(frame[BAND_COL]) == list(metrics_frame(report)[BAND_COL])

    def test_confusion_frame(self, report):
        frame = confusion_frame(report, ["bg", "a", "b", "c"])
        assert list(frame.columns) == ["ground truth", "pred bg", "pred a", "pred b", "pred c"]
        assert frame.iloc[:, 1:].to_numpy().sum() == 16


class TestExcel:
    def test_metrics_workbook(self, report):
        wb = workbook(metrics_to_excel_bytes(report))
        assert wb.sheetnames == ["Metrics", "Confusion"]
        ws = wb["Metrics"]
        assert ws.freeze_panes == "A2"
        assert ws["A1"].font.name == "Times New Roman" and ws["A1"].font.bold
        assert "MetricsTable" in ws.tables

    def test_band_cells_coloured(self, report):
        ws = workbook(metrics_to_excel_bytes(report))["Metrics"]
        header = [c.value for c in ws[1]]
        col = header.index(BAND_COL) + 1
        for r in range(2, ws.max_row + 1):
            band = ws.cell(r, col).value
            if band:
                assert ws.cell(r, col).fill.fgColor.rgb.endswith(BAND_COLOURS[band])

    def test_epoch_log_workbook(self, log):
        wb = workbook(epoch_log_to_excel_bytes(log))
        ws = wb["Epoch_Log"]
        assert ws.max_row == len(log) + 1
        assert [c.value for c in ws[1]][:3] == ["stage", "epoch", "total"]

    def test_multi_sheet_skips_empty(self, report):
        wb = workbook(to_excel_bytes_multi_sheets({"Metrics": metrics_frame(report), "Nothing": pd.DataFrame()}))
        assert wb.sheetnames == ["Metrics"]

    def test_multi_sheet_all_empty(self):
        assert workbook(to_excel_bytes_multi_sheets({"A": pd.DataFrame()})).sheetnames == ["Empty"]


class TestRunReport:
    def test_final_losses_per_stage(self, log):
        last = final_losses(log)
        assert list(last["stage"]) == ["stage1", "stage2"]
        assert list(last["epoch"]) == [3, 2]

    def test_highlights_list_ablation(self):
        cfg = tiny_config(ablation__disable_tsa="true", ablation__ccnn_mode="nolinking")
        values = dict(zip(*config_highlights(cfg).to_dict("list").values()))
        assert "disable_tsa" in values["Ablation"] and "ccnn_mode=nolinking" in values["Ablation"]
        assert values["CCNN iterations (stage1 / stage2)"] == "1 / 4"

    def test_tables(self, log, report):
        tables = build_report_tables(tiny_config(), log, report)
        assert list(tables) == ["Run Summary", "Final Losses", "Metrics", "Epoch Log"]
        summary = dict(zip(tables["Run Summary"]["Setting"], tables["Run Summary"]["Value"]))
        assert summary["mIoU"] == f"{report.m_iou:.4f}"
        assert summary["aAcc"] == f"{report.a_acc:.4f}"

    def test_excel(self, log, report):
        wb = workbook(export_run_report_excel_bytes(tiny_config(), log, report))
        assert wb.sheetnames == ["Run Summary", "Final Losses", "Metrics", "Epoch Log"]
        assert wb["Final Losses"]["A1"].font.name == "Times New Roman"

    def test_report_bands_use_workbook_palette(self, log, report):
        ws = workbook(export_run_report_excel_bytes(tiny_config(), log, report))["Metrics"]
        header = [c.value for c in ws[1]]
        col = header.index(BAND_COL) + 1
        painted = 0
        for r in range(2, ws.max_row + 1):
            band = ws.cell(r, col).value
            if band:
                assert ws.cell(r, col).fill.fgColor.rgb.endswith(BAND_COLOURS[band])
                painted += 1
        assert painted == 4

    def test_excel_without_data(self):
        wb = workbook(export_run_report_excel_bytes(tiny_config()))
        assert wb["Metrics"]["A1"].value == "No data"

    def test_pdf(self, log, report):
        assert export_run_report_pdf_bytes(tiny_config(), log, report).startswith(b"%PDF")

    def test_pdf_from_metrics_csv(self, report, tmp_path):
        report.to_csv(tmp_path / "m.csv")
        assert export_run_report_pdf_bytes(tiny_config(), report=pd.read_csv(tmp_path / "m.csv")).startswith(b"%PDF")
