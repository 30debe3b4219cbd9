# src/report_export.py
# Run reports (Excel + PDF) built from a config, the epoch log and an optional metrics report.
# English, simple, readable.

from __future__ import annotations

from datetime import datetime
from io import BytesIO
from typing import Dict, Optional, Union

import openpyxl
import pandas as pd
from openpyxl.styles import Alignment, Border, Font, Side
from openpyxl.utils import get_column_letter
from openpyxl.worksheet.table import Table, TableStyleInfo
from reportlab.lib import colors
from reportlab.lib.pagesizes import A4
from reportlab.lib.styles import getSampleStyleSheet
from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, TableStyle
from reportlab.platypus import Table as RLTable

from src.config import LOSS_HEADS, RunConfig, stage_t_steps
from src.export import BAND_COL, BAND_COLOURS, FILLS, add_bands, metrics_frame
from src.metrics import MetricsReport

PDF_BAND_COLOURS = {band: colors.HexColor(f"#{rgb}") for band, rgb in BAND_COLOURS.items()}


# ----------------------------
# Helpers
# ----------------------------

def _fmt(x) -> str:
    if isinstance(x, float):
        return "" if x != x else f"{x:.4f}"
    return str(x)


def _autofit(ws):
    for col in range(1, ws.max_column + 1):
        max_len = 0
        for row in range(1, ws.max_row + 1):
            v = ws.cell(row, col).value
            if v is not None:
                max_len = max(max_len, len(str(v)))
        ws.column_dimensions[get_column_letter(col)].width = min(max_len + 2, 55)


def _apply_sheet_style(ws):
    font = Font(name="Times New Roman", size=12)
    align = Alignment(horizontal="center", vertical="center", wrap_text=True)
    thin = Side(style="thin", color="999999")
    border = Border(left=thin, right=thin, top=thin, bottom=thin)
    for r in range(1, ws.max_row + 1):
        for c in range(1, ws.max_column + 1):
            cell = ws.cell(r, c)
            cell.font = font
            cell.alignment = align
            cell.border = border
    ws.freeze_panes = "A2"


def _add_excel_table(ws, table_name: str):
    if ws.max_row < 2 or ws.max_column < 1:
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


def _fill_band_colors(ws, col_name: str = BAND_COL):
    headers = [ws.cell(1, c).value for c in range(1, ws.max_column + 1)]
    if col_name not in headers:
        return
    col = headers.index(col_name) + 1
    for r in range(2, ws.max_row + 1):
        fill = FILLS.get(ws.cell(r, col).value)
        if fill:
            ws.cell(r, col).fill = fill


# ----------------------------
# Core report builders
# ----------------------------

def final_losses(log: pd.DataFrame) -> pd.DataFrame:
    """Last logged epoch of each stage."""
    if log is None or log.empty:
        return pd.DataFrame(columns=["stage", "epoch", "total", *LOSS_HEADS])
    return log.groupby("stage", sort=False).tail(1).reset_index(drop=True)


def config_highlights(cfg: RunConfig) -> pd.DataFrame:
    a = cfg.ablation
    toggles = [name for name in ("disable_ceaef", "disable_sfi", "disable_dfi", "disable_mfe",
                                 "disable_mdfe", "disable_tsa", "disable_sa") if getattr(a, name)]
    if a.ccnn_mode:
        toggles.append(f"ccnn_mode={a.ccnn_mode}")
    if tuple(a.loss_mask) != LOSS_HEADS:
        toggles.append("loss_mask=" + ",".join(a.loss_mask))
    if a.fixed_loss_weights:
        toggles.append("fixed_loss_weights=" + ",".join(str(w) for w in a.fixed_loss_weights))
    rows = [
        ["Seed", cfg.seed],
        ["Classes", cfg.n_classes],
        ["Image size", f"{cfg.image_h} x {cfg.image_w}"],
        ["Encoder channels", ", ".join(str(c) for c in cfg.encoder.channels)],
        ["Decoder width", cfg.decoder.width],
        ["CCNN kernel / mode", f"{cfg.ccnn.kernel} / {cfg.ccnn.mode}"],
        ["CCNN iterations (stage1 / stage2)", f"{stage_t_steps(cfg, 'stage1')} / {stage_t_steps(cfg, 'stage2')}"],
        ["Stage1 epochs / batch / lr", f"{cfg.stage1.epochs} / {cfg.stage1.batch_size} / {cfg.stage1.lr:g}"],
        ["Stage2 epochs / batch / lr", f"{cfg.stage2.epochs} / {cfg.stage2.batch_size} / {cfg.stage2.lr:g}"],
        ["Ablation", "; ".join(toggles) or "none"],
    ]
    return pd.DataFrame(rows, columns=["Setting", "Value"])


def _headline(per_class: pd.DataFrame) -> dict:
    rows = per_class.set_index(per_class["class"].astype(str))
    out = {}
    if "mean" in rows.index:
        out["mAcc"], out["mIoU"] = float(rows.at["mean", "Acc"]), float(rows.at["mean", "IoU"])
    if "overall" in rows.index:
        out["aAcc"] = float(rows.at["overall", "Acc"])
    return out


def build_report_tables(
    cfg: RunConfig,
    log: Optional[pd.DataFrame] = None,
    report: Union[MetricsReport, pd.DataFrame, None] = None,
    class_names=None,
) -> Dict[str, pd.DataFrame]:
    """
    report is a MetricsReport or a metrics CSV frame (class, Acc, IoU rows).
    Returns dict of report tables:
      - Run Summary (settings + headline numbers)
      - Final Losses (last epoch of each stage)
      - Metrics (per class, with IoU band)
      - Epoch Log
    """
    summary = config_highlights(cfg)
    extra = []
    if log is not None and not log.empty:
        extra.append(["Final total loss", _fmt(float(log["total"].iloc[-1]))])
    if isinstance(report, MetricsReport):
        per_class = metrics_frame(report, class_names)
    elif report is not None and not report.empty:
        per_class = add_bands(report)
    else:
        per_class = pd.DataFrame()
    if not per_class.empty:
        extra += [[k, _fmt(v)] for k, v in _headline(per_class).items()]
    if extra:
        summary = pd.concat([summary, pd.DataFrame(extra, columns=["Setting", "Value"])], ignore_index=True)
    summary["Value"] = summary["Value"].astype(str)

    return {
        "Run Summary": summary,
        "Final Losses": final_losses(log),
        "Metrics": per_class,
        "Epoch Log": log if log is not None else pd.DataFrame(),
    }


def export_run_report_excel_bytes(
    cfg: RunConfig,
    log: Optional[pd.DataFrame] = None,
    report: Union[MetricsReport, pd.DataFrame, None] = None,
    class_names=None,
) -> bytes:
    tables = build_report_tables(cfg, log, report, class_names)

    wb = openpyxl.Workbook()
    wb.remove(wb.active)

    for idx, (sheet_name, df) in enumerate(tables.items(), start=1):
        ws = wb.create_sheet(title=sheet_name[:31])
        if df is None or df.empty:
            ws.append(["No data"])
            _apply_sheet_style(ws)
            _autofit(ws)
            continue
        ws.append(list(df.columns))
        for row in df.itertuples(index=False):
            ws.append([None if isinstance(v, float) and v != v else v for v in row])
        _apply_sheet_style(ws)
        _add_excel_table(ws, f"T{idx}_{sheet_name.replace(' ', '')}"[:28])
        _fill_band_colors(ws)
        _autofit(ws)

    out = BytesIO()
    wb.save(out)
    return out.getvalue()


def _rl_table(df: pd.DataFrame, font_size: int, band_col: str | None = None) -> RLTable:
    data = [list(df.columns)] + [[_fmt(v) for v in row] for row in df.itertuples(index=False)]
    style = [
        ("BACKGROUND", (0, 0), (-1, 0), colors.lightgrey),
        ("GRID", (0, 0), (-1, -1), 0.5, colors.grey),
        ("FONTNAME", (0, 0), (-1, -1), "Times-Roman"),
        ("FONTSIZE", (0, 0), (-1, -1), font_size),
        ("VALIGN", (0, 0), (-1, -1), "MIDDLE"),
    ]
    if band_col and band_col in df.columns:
        col = list(df.columns).index(band_col)
        for r, value in enumerate(df[band_col], start=1):
            if value in PDF_BAND_COLOURS:
                style.append(("BACKGROUND", (col, r), (col, r), PDF_BAND_COLOURS[value]))
    t = RLTable(data, repeatRows=1, hAlign="LEFT")
    t.setStyle(TableStyle(style))
    return t


def export_run_report_pdf_bytes(
    cfg: RunConfig,
    log: Optional[pd.DataFrame] = None,
    report: Union[MetricsReport, pd.DataFrame, None] = None,
    class_names=None,
    title: str = "RGB-T Segmentation - Run Summary",
) -> bytes:
    """Settings, final losses per stage, then the per-class metrics table."""
    tables = build_report_tables(cfg, log, report, class_names)

    buf = BytesIO()
    doc = SimpleDocTemplate(buf, pagesize=A4, title=title)
    styles = getSampleStyleSheet()
    story = [
        Paragraph(title, styles["Title"]),
        Paragraph(f"Generated on: {datetime.now().strftime('%Y-%m-%d %H:%M')}", styles["Normal"]),
        Spacer(1, 10),
        Paragraph("Run Summary", styles["Heading2"]),
        _rl_table(tables["Run Summary"], 10),
        Spacer(1, 12),
    ]

    losses = tables["Final Losses"]
    story.append(Paragraph("Final Losses", styles["Heading2"]))
    if not losses.empty:
        story.append(_rl_table(losses, 8))
    else:
        story.append(Paragraph("No training log.", styles["Normal"]))
    story.append(Spacer(1, 12))

    per_class = tables["Metrics"]
    story.append(Paragraph("Segmentation Metrics", styles["Heading2"]))
    if not per_class.empty:
        story.append(_rl_table(per_class, 9, band_col=BAND_COL))
    else:
        story.append(Paragraph("No evaluation results.", styles["Normal"]))

    doc.build(story)
    return buf.getvalue()
