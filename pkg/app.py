"""
Alignment Run Dashboard - Main Entry Point

Streamlit application over the run registry: recent runs, per-run metrics with
PDF reports, anchor-hop sweeps and ablation comparisons.
"""

import os
import sys

import pandas as pd
import streamlit as st

# Add the repository root to path for imports
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from src.database.managers import RunManager, SweepManager
from src.models.models import ABLATIONS, HITS_CUTOFFS
from src.utils.pdf_generator import MetricsReportGenerator

# Page config
st.set_page_config(
    page_title="Entity Alignment Runs",
    page_icon="🔗",
    layout="wide",
    initial_sidebar_state="expanded"
)

st.markdown("""
<style>
    .main > div {
        padding-top: 2rem;
    }
    .stButton > button {
        width: 100%;
    }
    .run-header {
        background: linear-gradient(90deg, #667eea 0%, #764ba2 100%);
        color: white;
        padding: 1rem;
        border-radius: 0.5rem;
        margin-bottom: 1rem;
    }
</style>
""", unsafe_allow_html=True)


def format_score(value) -> str:
    return f"{float(value):.4f}" if value is not None else "N/A"


def overview_page():
    """Registry overview page"""
    st.markdown('<div class="run-header"><h1>📊 Runs</h1></div>', unsafe_allow_html=True)

    runs = RunManager.get_all_runs(limit=200)
    scored = [r for r in runs if "mrr" in r.metrics]

    col1, col2, col3, col4 = st.columns(4)
    with col1:
        st.metric("🧪 Recorded Runs", len(runs))
    with col2:
        st.metric("🏋️ Pretraining Runs", sum(r.command == "pretrain" for r in runs))
    with col3:
        best = max((r.metrics["mrr"] for r in scored), default=None)
        st.metric("🏆 Best MRR", format_score(best))
    with col4:
        st.metric("🔁 Transfers", sum(r.command == "transfer" for r in runs))

    col1, col2 = st.columns([2, 1])
    with col1:
        command = st.selectbox("Command", ["", "pretrain", "finetune", "transfer", "eval", "grad-check", "hop-sweep"])
    with col2:
        ablation = st.selectbox("Ablation", [""] + list(ABLATIONS))

    filtered = RunManager.search_runs(command=command, ablation=ablation, limit=200)
    if filtered:
        st.dataframe(RunManager.runs_frame(filtered), use_container_width=True)
    else:
        st.info("No runs recorded yet. Run `python align.py pretrain --task <dir>` to add one.")


def run_detail_page():
    """Single run page with metrics, configuration and report download"""
    st.markdown('<div class="run-header"><h1>🔎 Run Detail</h1></div>', unsafe_allow_html=True)

    runs = RunManager.get_all_runs(limit=200)
    if not runs:
        st.info("No runs recorded yet.")
        return

    labels = {f"{r.run_id[:8]} · {r.command} · {r.task_path}": r for r in runs}
    run = labels[st.selectbox("Run", list(labels))]
    metrics = run.metrics

    cols = st.columns(len(HITS_CUTOFFS) + 1)
    cols[0].metric("MRR", format_score(metrics.get("mrr")))
    for col, k in zip(cols[1:], HITS_CUTOFFS):
        col.metric(f"Hits@{k}", format_score(metrics.get(f"hits@{k}")))

    col1, col2 = st.columns(2)
    with col1:
        st.subheader("📈 Metrics")
        st.dataframe(pd.DataFrame(sorted(metrics.items()), columns=["Metric", "Value"]).astype(str),
                     use_container_width=True)
    with col2:
        st.subheader("⚙️ Configuration")
        st.dataframe(pd.DataFrame(sorted(run.config.items()), columns=["Setting", "Value"]).astype(str),
                     use_container_width=True)

    sweep = SweepManager.get_sweep(run.run_id)
    if not sweep.empty:
        st.subheader("🔭 Anchor-hop sweep")
        st.line_chart(sweep[["mrr", "hits@10"]])

    notes = st.text_area("Notes", value=run.notes)
    col1, col2, col3 = st.columns(3)
    with col1:
        if st.button("💾 Save Notes"):
            RunManager.update_notes(run.run_id, notes)
            st.success("Notes saved")
    with col2:
        pdf = MetricsReportGenerator().render_bytes(run, sweep if not sweep.empty else None)
        st.download_button("📄 Download PDF Report", pdf, file_name=f"run_{run.run_id[:8]}.pdf",
                           mime="application/pdf")
    with col3:
        if st.button("🗑️ Delete Run"):
            RunManager.delete_run(run.run_id)
            st.warning("Run deleted")
            st.rerun()


def sweeps_page():
    """Hop sweeps side by side"""
    st.markdown('<div class="run-header"><h1>🔭 Anchor-Hop Sweeps</h1></div>', unsafe_allow_html=True)
    sweeps = RunManager.search_runs(command="hop-sweep")
    if not sweeps:
        st.info("No sweeps recorded. Run `python align.py hop-sweep --task <dir>`.")
        return
    curves = {}
    for run in sweeps:
        frame = SweepManager.get_sweep(run.run_id)
        if not frame.empty:
            curves[f"{run.run_id[:8]} {run.task_path}"] = frame["mrr"]
    if curves:
        st.line_chart(pd.DataFrame(curves))


def ablations_page():
    """Test MRR per ablation mode, best run per task"""
    st.markdown('<div class="run-header"><h1>🧩 Ablations</h1></div>', unsafe_allow_html=True)
    runs = [r for r in RunManager.get_all_runs(limit=500)
            if r.command in ("pretrain", "finetune") and "mrr" in r.metrics]
    if not runs:
        st.info("No training runs with metrics yet.")
        return
    frame = pd.DataFrame([{"task": r.task_path, "ablation": r.ablation, "mrr": r.metrics["mrr"]} for r in runs])
    table = frame.groupby(["task", "ablation"])["mrr"].max().unstack("ablation")
    st.dataframe(table, use_container_width=True)
    st.bar_chart(table.T)


def main():
    """Main application entry point"""

    with st.sidebar:
        st.title("🔗 Alignment Runs")
        page = st.radio(
            "Navigate to:",
            ["📊 Runs", "🔎 Run Detail", "🔭 Sweeps", "🧩 Ablations"],
            index=0
        )

    if page == "📊 Runs":
        overview_page()
    elif page == "🔎 Run Detail":
        run_detail_page()
    elif page == "🔭 Sweeps":
        sweeps_page()
    elif page == "🧩 Ablations":
        ablations_page()


if __name__ == "__main__":
    main()
