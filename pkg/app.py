# app.py
import io
from dataclasses import replace

import numpy as np
import pandas as pd
import streamlit as st

from src.ccnn import scalar_trajectory
from src.checkpoint import CheckpointError, decode_checkpoint, restore
from src.config import DEFAULTS, ConfigError, RunConfig, apply_overrides, parse_config_text, validate
from src.export import add_bands, epoch_log_to_excel_bytes, to_excel_bytes_multi_sheets
from src.io import PALETTE, DatasetError, colorize, read_rgb, read_thermal, to_uint8
from src.model import init_model
from src.report_export import export_run_report_excel_bytes, export_run_report_pdf_bytes
from src.synthetic import gen_synthetic_scene
from src.tensor_core import ContractError
from src.training import segment

st.set_page_config(page_title="RGB-T Segmentation", layout="wide")
st.title("RGB-T Segmentation")

XLSX_MIME = "application/vnd.openxmlformats-officedocument.spreadsheetml.sheet"

# ========= Config (Sidebar) =========
st.sidebar.header("Run config")
config_file = st.sidebar.file_uploader("Config file (.conf)", type=["conf", "txt"])

cfg = RunConfig()
if config_file:
    try:
        cfg = validate(apply_overrides(RunConfig(), parse_config_text(config_file.getvalue().decode("utf-8"))))
    except ConfigError as e:
        st.error(f"Config rejected: {e}")
        st.stop()

st.sidebar.subheader("CCNN")
t_steps = st.sidebar.number_input(
    "Iterations per layer (T)",
    min_value=1,
    max_value=16,
    value=int(cfg.ccnn.t_steps_finetune),
    step=1,
)
with st.sidebar.expander("Defaults"):
    st.json(DEFAULTS)


def _legend(n_classes: int) -> None:
    cols = st.columns(min(n_classes, 6))
    for k in range(n_classes):
        swatch = np.broadcast_to(PALETTE[k], (16, 32, 3)).copy()
        cols[k % len(cols)].image(swatch, caption=f"class {k}")


def _thermal_view(thermal: np.ndarray) -> np.ndarray:
    return to_uint8(thermal[0])


# ========= Tabs =========
tab_pred, tab_synth, tab_metrics, tab_log, tab_dyn = st.tabs(
    ["Predict", "Synthetic Scene", "Metrics", "Training Log", "CCNN Dynamics"]
)

# ===== Predict =====
with tab_pred:
    st.subheader("Segment an RGB / thermal pair")
    c1, c2, c3 = st.columns(3)
    rgb_file = c1.file_uploader("RGB (.png)", type=["png"])
    th_file = c2.file_uploader("Thermal (.png)", type=["png"])
    ckpt_file = c3.file_uploader("Checkpoint (.ckpt)", type=["ckpt"])

    if not (rgb_file and th_file and ckpt_file):
        st.info("Upload an RGB image, its thermal image and a checkpoint.")
    else:
        try:
            ckpt = decode_checkpoint(ckpt_file.getvalue())
            n_classes = ckpt.meta_int("n_classes", cfg.n_classes)
            model_cfg = cfg if n_classes == cfg.n_classes else validate(replace(cfg, n_classes=n_classes))
            model = restore(init_model(model_cfg), ckpt)
            rgb = read_rgb(io.BytesIO(rgb_file.getvalue()))
            thermal = read_thermal(io.BytesIO(th_file.getvalue()))
            with st.spinner("Running the network..."):
                labels = segment(model, rgb, thermal, int(t_steps))
        except (CheckpointError, ConfigError, ContractError, DatasetError, OSError) as e:
            st.error(f"Prediction failed: {e}")
            st.stop()

        v1, v2, v3 = st.columns(3)
        v1.image(to_uint8(rgb.transpose(1, 2, 0)), caption="RGB", use_container_width=True)
        v2.image(_thermal_view(thermal), caption="Thermal", use_container_width=True)
        v3.image(colorize(labels), caption="Prediction", use_container_width=True)
        _legend(model_cfg.n_classes)

        counts = pd.Series(np.bincount(labels.reshape(-1), minlength=model_cfg.n_classes), name="pixels")
        st.dataframe(counts.rename_axis("class").reset_index(), use_container_width=True, hide_index=True)

# ===== Synthetic scene =====
with tab_synth:
    st.subheader("Synthetic scene")
    s1, s2, s3 = st.columns(3)
    seed = s1.number_input("Seed", min_value=0, value=0, step=1)
    n_cls = s2.number_input("Classes", min_value=3, max_value=len(PALETTE), value=4, step=1)
    size = s3.selectbox("Size", [64, 96, 128], index=0)
    night_prob = st.slider("Night probability", 0.0, 1.0, 0.3, 0.05)

    try:
        scene = gen_synthetic_scene(int(seed), int(size), int(size), int(n_cls), float(night_prob))
    except ContractError as e:
        st.error(f"Synthesis failed: {e}")
        st.stop()

    v1, v2, v3 = st.columns(3)
    v1.image(to_uint8(scene.rgb.transpose(1, 2, 0)), caption="RGB (night)" if scene.night else "RGB", use_container_width=True)
    v2.image(_thermal_view(scene.thermal), caption="Thermal", use_container_width=True)
    v3.image(colorize(scene.labels), caption="Labels", use_container_width=True)

# ===== Metrics =====
with tab_metrics:
    st.subheader("Metrics (CSV from eval)")
    metrics_file = st.file_uploader("Metrics CSV", type=["csv"], key="metrics_csv")
    if not metrics_file:
        st.info("Upload a metrics CSV written by the eval command.")
    else:
        metrics_df = pd.read_csv(metrics_file)
        missing = [c for c in ("class", "Acc", "IoU") if c not in metrics_df.columns]
        if missing:
            st.error("Missing required columns in metrics CSV:")
            st.write(missing)
            st.stop()

        banded = add_bands(metrics_df)
        st.dataframe(banded, use_container_width=True, hide_index=True)

        col1, col2 = st.columns(2)
        with col1:
            st.download_button(
                "Download Metrics (Excel)",
                data=to_excel_bytes_multi_sheets({"Metrics": banded}),
                file_name="metrics.xlsx",
                mime=XLSX_MIME,
                key="dl_metrics_excel",
            )
        with col2:
            st.download_button(
                "Download Run Summary (PDF)",
                data=export_run_report_pdf_bytes(cfg, report=metrics_df),
                file_name="run_summary.pdf",
                mime="application/pdf",
                key="dl_metrics_pdf",
            )
        st.caption("Bands on IoU: RED < 0.5 <= ORANGE < 0.7 <= YELLOW < 0.85 <= GREEN.")

# ===== Training log =====
with tab_log:
    st.subheader("Training log")
    log_file = st.file_uploader("epoch_log.csv", type=["csv"], key="epoch_log")
    if not log_file:
        st.info("Upload the epoch_log.csv written by the train command.")
    else:
        log = pd.read_csv(log_file)
        if "total" not in log.columns:
            st.error("epoch_log.csv has no 'total' column.")
            st.stop()
        st.line_chart(log.drop(columns=[c for c in ("stage", "epoch") if c in log.columns]))
        st.dataframe(log, use_container_width=True, hide_index=True)

        col1, col2 = st.columns(2)
        with col1:
            st.download_button(
                "Download Epoch Log (Excel)",
                data=epoch_log_to_excel_bytes(log),
                file_name="epoch_log.xlsx",
                mime=XLSX_MIME,
                key="dl_log_excel",
            )
        with col2:
            st.download_button(
                "Download Run Report (Excel)",
                data=export_run_report_excel_bytes(cfg, log),
                file_name="run_report.xlsx",
                mime=XLSX_MIME,
                key="dl_log_report",
            )

# ===== CCNN dynamics =====
with tab_dyn:
    st.subheader("Scalar CCNN trajectory")
    d1, d2, d3 = st.columns(3)
    drive = d1.number_input("Input drive", value=1.0, step=0.1)
    m = d2.number_input("Feeding coupling m", value=0.0, step=0.1)
    w = d3.number_input("Linking coupling w", value=0.0, step=0.1)
    steps = st.slider("Steps", 1, 32, 8)

    traj = scalar_trajectory(int(steps), drive=float(drive), m=float(m), w=float(w), cfg=cfg.ccnn)
    st.line_chart(traj.set_index("n")[["F", "L", "E", "U", "Y", "Y_avg"]])
    st.dataframe(traj, use_container_width=True, hide_index=True)
