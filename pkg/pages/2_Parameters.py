"""
Parameter distribution page - weight and bias values per layer.
"""

import streamlit as st
import numpy as np
import plotly.express as px

from src.run_reports import ReportProcessor

# Page configuration
st.set_page_config(
    page_title="Parameters",
    page_icon="📈",
    layout="wide"
)

@st.cache_data(ttl=600)
def load_param_data():
    processor = ReportProcessor()
    return processor.prepare_dashboard_data()

def main():
    st.title("📈 Parameter Distributions")
    st.markdown("---")

    try:
        data = load_param_data()
        params_df = data['params']

        if params_df.empty:
            st.warning("No parameter table found. Run `python -m src.cli params --checkpoint ...` first.")
            return

        layers = sorted(params_df['layer'].unique())
        selected_layers = st.sidebar.multiselect("Layers", options=layers, default=layers)
        kind = st.sidebar.radio("Kind", options=["weight", "bias"], index=0)
        log_scale = st.sidebar.checkbox("Log scale counts", value=True)

        df = params_df[(params_df['layer'].isin(selected_layers)) & (params_df['kind'] == kind)]
        if df.empty:
            st.info("No values for this selection.")
            return

        fig = px.histogram(df, x='value', color='layer', barmode='overlay', nbins=100,
                           log_y=log_scale, title=f'{kind.capitalize()} values per layer')
        st.plotly_chart(fig, use_container_width=True)

        st.subheader("Summary")
        st.dataframe(data['params_summary'], use_container_width=True)
        st.caption(f"Largest absolute value: {np.abs(df['value']).max():.4g}")

    except Exception as e:
        st.error(f"Failed to load reports: {e}")

if __name__ == "__main__":
    main()
