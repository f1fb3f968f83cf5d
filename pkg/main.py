import os

import pandas as pd
import plotly.express as px
import plotly.graph_objects as go
import streamlit as st

from config import get_settings
from experiments import (BASELINE, FEATURE_LABELS, SCOPE_LABELS, SETTING_LABELS, SETTINGS, format_table, load_rows,
                         seed_frame)

# Page configuration
st.set_page_config(
    page_title="🎙️ Prosody & Coreference Results",
    page_icon="🎙️",
    layout="wide",
    initial_sidebar_state="expanded",
)


def load_report(path: str):
    """Rows from a saved TSV report, or None with an error shown"""
    if not os.path.exists(path):
        st.info(f"No report at {path} yet. Run `python cli.py run-experiments` first.")
        return None
    try:
        return load_rows(path)
    except Exception as e:
        st.error(f"❌ Error reading report: {e}")
        return None


def show_feature_block(rows, feature: str, baseline_conll: float):
    """Settings as rows, scopes as columns, like the printed tables"""
    cells = [row for row in rows if row.feature == feature]
    if not cells:
        st.warning(f"⚠️ No {FEATURE_LABELS[feature].lower()} cells in this report")
        return

    table = pd.DataFrame(
        [[next((r.conll for r in cells if r.setting == setting and r.scope == scope), None) for scope in SCOPE_LABELS]
         for setting in SETTINGS],
        index=[SETTING_LABELS[s] for s in SETTINGS],
        columns=list(SCOPE_LABELS.values()),
    ).dropna(how="all")
    st.dataframe(table.style.format("{:.2f}", na_rep="-"), use_container_width=True)

    fig = go.Figure()
    for scope, label in SCOPE_LABELS.items():
        scoped = [r for r in cells if r.scope == scope]
        fig.add_trace(go.Bar(
            name=label,
            x=[SETTING_LABELS[r.setting] for r in scoped],
            y=[r.conll for r in scoped],
            hovertemplate='<b>%{x}</b><br>CoNLL: %{y:.2f}<extra></extra>',
        ))
    fig.add_hline(y=baseline_conll, line_dash="dash", annotation_text="baseline")
    fig.update_layout(title=FEATURE_LABELS[feature], barmode="group", yaxis_title="CoNLL", height=400)
    st.plotly_chart(fig, use_container_width=True)

    significance = pd.DataFrame([{
        "setting": SETTING_LABELS[r.setting],
        "scope": SCOPE_LABELS[r.scope],
        "Δ CoNLL": r.delta,
        "sign test p": r.sign_p,
        "Wilcoxon p": r.wilcoxon_p,
    } for r in cells])
    st.dataframe(significance, use_container_width=True, hide_index=True)


def show_seed_spread(rows):
    seeds = seed_frame(rows)
    if seeds["seed_index"].nunique() < 2:
        st.info("Single-seed report: no spread to show")
        return
    fig = px.box(seeds, x="cell", y="conll", points="all", title="CoNLL per seed")
    fig.update_layout(height=450, xaxis_tickangle=-35)
    st.plotly_chart(fig, use_container_width=True)


def main():
    st.title("🎙️ Prosodic features for coreference resolution")

    with st.sidebar:
        path = st.text_input("Report (TSV)", value=get_settings().report_path)

    rows = load_report(path)
    if not rows:
        return

    baseline = next((row for row in rows if row.feature == BASELINE), None)
    if baseline is None:
        st.error("❌ Error: report has no baseline row")
        return

    col1, col2, col3 = st.columns(3)
    best = max(rows, key=lambda r: r.conll)
    with col1:
        st.metric("Baseline CoNLL", f"{baseline.conll:.2f}")
    with col2:
        st.metric("Best cell", f"{best.conll:.2f}", delta=f"{best.conll - baseline.conll:+.2f}")
    with col3:
        st.metric("Seeds", len(baseline.seeds))

    tabs = st.tabs(["🎯 Pitch accent", "🔔 Nuclear accent", "🎲 Seeds", "📄 Text report"])
    with tabs[0]:
        show_feature_block(rows, "accent", baseline.conll)
    with tabs[1]:
        show_feature_block(rows, "nuclear", baseline.conll)
    with tabs[2]:
        show_seed_spread(rows)
    with tabs[3]:
        st.code(format_table(rows))


if __name__ == "__main__":
    main()
