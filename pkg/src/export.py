# src/export.py
# Formatted Excel exports: metrics report (IoU bands coloured) and the per-epoch training log.
from __future__ import annotations

from io import BytesIO

import pandas as pd
from openpyxl.styles import Alignment, Font, PatternFill
from openpyxl.utils import get_column_letter
from openpyxl.worksheet.table import Table, TableStyleInfo

from src.metrics import MetricsReport, iou_band

# IoU band colours, shared by every workbook and the PDF report
BAND_COLOURS = {"RED": "FF0000", "ORANGE": "FFA500", "YELLOW": "FFFF00", "GREEN": "00B050"}
FILLS = {band: PatternFill(start_color=rgb, end_color=rgb, fill_type="solid") for band, rgb in BAND_COLOURS.items()}

BASE_FONT = Font(name="Times New Roman", size=12)
HEADER_FONT = Font(name="Times New Roman", size=12, bold=True)
CENTER = Alignment(horizontal="center", vertical="center", wrap_text=True)

BAND_COL = "IoU Band"
METRICS_SHEET = "Metrics"
CONFUSION_SHEET = "Confusion"
LOG_SHEET = "Epoch_Log"


def _autofit_columns(ws, min_width=10, max_width=60):
    for col_idx in range(1, ws.max_column + 1):
        longest = max(
            (len(str(ws.cell(row=r, column=col_idx).value)) for r in range(1, ws.max_row + 1)
             if ws.cell(row=r, column=col_idx).value is not None),
            default=0,
        )
        ws.column_dimensions[get_column_letter(col_idx)].width = max(min_width, min(max_width, longest + 2))


def _apply_global_format(ws, number_format: str | None = None):
    ws.freeze_panes = "A2"
    ws.row_dimensions[1].height = 22
    for r in range(1, ws.max_row + 1):
        for c in range(1, ws.max_column + 1):
            cell = ws.cell(row=r, column=c)
            cell.font = HEADER_FONT if r == 1 else BASE_FONT
            cell.alignment = CENTER
            if r > 1 and number_format and isinstance(cell.value, float):
                cell.number_format = number_format


def _add_table_with_filter(ws, table_name: str):
    if ws.max_row < 2:
        return
    ref = f"A1:{get_column_letter(ws.max_column)}{ws.max_row}"
    tab = Table(displayName=table_name, ref=ref)
    tab.tableStyleInfo = TableStyleInfo(
        name="TableStyleMedium9",
        showFirstColumn=False,
        showLastColumn=False,
        showRowStripes=True,
        showColumnStripes=False,
    )
    ws.add_table(tab)


def _paint_bands(ws, col_name: str = BAND_COL):
    header = [cell.value for cell in ws[1]]
    if col_name not in header:
        return
    col_idx = header.index(col_name) + 1
    for r in range(2, ws.max_row + 1):
        fill = FILLS.get(ws.cell(row=r, column=col_idx).value)
        if fill:
            ws.cell(row=r, column=col_idx).fill = fill


def add_bands(df: pd.DataFrame) -> pd.DataFrame:
    """Quality band per class IoU; summary rows (mean, overall) stay blank."""
    df = df.copy()
    df[BAND_COL] = [iou_band(v) if c not in ("mean", "overall") else "" for c, v in zip(df["class"], df["IoU"])]
    return df


def metrics_frame(report: MetricsReport, class_names=None) -> pd.DataFrame:
    return add_bands(report.to_frame(class_names))


def confusion_frame(report: MetricsReport, class_names=None) -> pd.DataFrame:
    n = report.counts.n_classes
    names = list(class_names) if class_names is not None else [str(i) for i in range(n)]
    df = pd.DataFrame(report.counts.matrix, columns=[f"pred {c}" for c in names])
    df.insert(0, "ground truth", names)
    return df


def metrics_to_excel_bytes(report: MetricsReport, class_names=None) -> bytes:
    bio = BytesIO()
    with pd.ExcelWriter(bio, engine="openpyxl") as writer:
        metrics_frame(report, class_names).to_excel(writer, sheet_name=METRICS_SHEET, index=False)
        confusion_frame(report, class_names).to_excel(writer, sheet_name=CONFUSION_SHEET, index=False)
        wb = writer.book

        ws = wb[METRICS_SHEET]
        _paint_bands(ws)
        _apply_global_format(ws, number_format="0.0000")
        _add_table_with_filter(ws, "MetricsTable")
        _autofit_columns(ws)

        ws2 = wb[CONFUSION_SHEET]
        _apply_global_format(ws2)
        _add_table_with_filter(ws2, "ConfusionTable")
        _autofit_columns(ws2)
    return bio.getvalue()


def epoch_log_to_excel_bytes(log: pd.DataFrame) -> bytes:
    bio = BytesIO()
    with pd.ExcelWriter(bio, engine="openpyxl") as writer:
        log.to_excel(writer, sheet_name=LOG_SHEET, index=False)
        ws = writer.book[LOG_SHEET]
        _apply_global_format(ws, number_format="0.000000")
        _add_table_with_filter(ws, "EpochLogTable")
        _autofit_columns(ws)
    return bio.getvalue()


def to_excel_bytes_multi_sheets(sheets: dict[str, pd.DataFrame]) -> bytes:
    """
    One workbook, one sheet per frame ({"SheetName": df}). Empty frames are skipped.
    Same formatting everywhere; any IoU Band column is coloured.
    """
    bio = BytesIO()
    with pd.ExcelWriter(bio, engine="openpyxl") as writer:
        for sheet_name, df in sheets.items():
            if df is None or len(df) == 0:
                continue
            df.to_excel(writer, sheet_name=sheet_name[:31], index=False)
        if not any(df is not None and len(df) for df in sheets.values()):
            pd.DataFrame({"": ["No data"]}).to_excel(writer, sheet_name="Empty", index=False)
        wb = writer.book
        for idx, sheet_name in enumerate(wb.sheetnames, start=1):
            ws = wb[sheet_name]
            _paint_bands(ws)
            _apply_global_format(ws, number_format="0.0000")
            # Excel requires unique table names
            _add_table_with_filter(ws, f"Tbl{idx}")
            _autofit_columns(ws)
    return bio.getvalue()
