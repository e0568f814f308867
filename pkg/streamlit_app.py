"""
Main Streamlit dashboard for RGVAE training runs.
"""

import streamlit as st
import pandas as pd
import plotly.express as px

import config
from src.run_reports import ReportProcessor

# Page configuration
st.set_page_config(
    page_title=config.PAGE_TITLE,
    page_icon=config.PAGE_ICON,
    layout=config.LAYOUT
)

# Load data using cache
@st.cache_data(ttl=600)
def load_dashboard_data():
    """Load all dashboard data with caching."""
    processor = ReportProcessor()
    return processor.prepare_dashboard_data()

# Main app
def main():
    st.title(f"{config.PAGE_ICON} {config.PAGE_TITLE}")
    st.markdown("### Training curves")
    st.markdown("---")

    try:
        data = load_dashboard_data()
        training_df = data['training']

        if training_df.empty:
            st.warning("No training log found. Run `python -m src.cli train ...` first.")
            return

        # Sidebar filters
        st.sidebar.title("Filters")
        max_epoch = int(training_df['epoch'].max())
        epoch_range = st.sidebar.slider(
            "Epoch range",
            min_value=1,
            max_value=max(max_epoch, 2),
            value=(1, max_epoch)
        )
        df = training_df[(training_df['epoch'] >= epoch_range[0]) & (training_df['epoch'] <= epoch_range[1])]

        # Summary metrics
        st.subheader("Last epoch")
        last = df.iloc[-1]
        metric_cols = [col for col in ['elbo', 'recon', 'kl', 'perm_rate', 'val_elbo', 'loss'] if col in df.columns]
        for col, name in zip(st.columns(len(metric_cols)), metric_cols):
            with col:
                st.metric(name, f"{last[name]:.4f}")

        st.markdown("---")

        # Loss curves
        loss_cols = [col for col in ['elbo', 'val_elbo', 'recon', 'loss'] if col in df.columns]
        df_loss = df.melt(id_vars='epoch', value_vars=loss_cols, var_name='series', value_name='value')
        fig_loss = px.line(df_loss, x='epoch', y='value', color='series', markers=True,
                           title='Loss per epoch')
        fig_loss.update_layout(hovermode='x unified')
        st.plotly_chart(fig_loss, use_container_width=True)

        col1, col2 = st.columns(2)

        with col1:
            if 'kl' in df.columns:
                fig_kl = px.line(df, x='epoch', y='kl', markers=True, title='KL divergence')
                st.plotly_chart(fig_kl, use_container_width=True)
            else:
                st.info("No KL column in this log.")

        with col2:
            if 'perm_rate' in df.columns:
                df_perm = df.assign(perm_pct=df['perm_rate'] * 100)
                fig_perm = px.line(df_perm, x='epoch', y='perm_pct', markers=True,
                                   labels={'perm_pct': 'permuted graphs (%)'},
                                   title='Permutation rate')
                st.plotly_chart(fig_perm, use_container_width=True)
            else:
                st.info("No permutation rate in this log.")

        if 'mrr' in df.columns and df['mrr'].notna().any():
            st.subheader("Link prediction during training")
            fig_mrr = px.line(df.dropna(subset=['mrr']), x='epoch', y='mrr', markers=True, title='Subset MRR')
            st.plotly_chart(fig_mrr, use_container_width=True)

        st.subheader("Log")
        st.dataframe(df, use_container_width=True)

    except Exception as e:
        st.error(f"Failed to load reports: {e}")

    st.markdown("---")
    st.markdown(f"**Report directory:** `{config.REPORT_DIR}`")

if __name__ == "__main__":
    main()
