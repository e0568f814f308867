"""
Latent experiments page - interpolation grids and generation validity.
"""

import streamlit as st
import plotly.graph_objects as go

from src.run_reports import ReportProcessor

# Page configuration
st.set_page_config(
    page_title="Latent Experiments",
    page_icon="🧭",
    layout="wide"
)

@st.cache_data(ttl=600)
def load_experiment_data():
    processor = ReportProcessor()
    return processor.prepare_dashboard_data()

def main():
    st.title("🧭 Latent Experiments")
    st.markdown("---")

    try:
        data = load_experiment_data()
        generation_df = data['generation']
        interpolation_df = data['interpolation']

        # Generation validity
        st.header("Generated triples")
        if generation_df.empty:
            st.info("No generation report found. Run `python -m src.cli generate ...` first.")
        else:
            results = dict(generation_df[generation_df['section'] == 'result'][['key', 'value']].values)
            col1, col2, col3, col4 = st.columns(4)
            with col1:
                st.metric("Kept", results.get('kept', 'N/A'))
            with col2:
                st.metric("Valid", results.get('valid', 'N/A'))
            with col3:
                st.metric("Novel", results.get('novel', 'N/A'))
            with col4:
                st.metric("Key type", results.get('key_type', 'N/A'))

            if 'valid_rate' in results and 'baseline' in results:
                fig = go.Figure(go.Bar(
                    x=['valid rate', 'type baseline'],
                    y=[float(results['valid_rate']), float(results['baseline'])],
                ))
                fig.update_layout(title='Valid-head rate against random guessing', yaxis_range=[0, 1])
                st.plotly_chart(fig, use_container_width=True)

        st.markdown("---")

        # Interpolation
        st.header("Interpolation")
        if interpolation_df.empty:
            st.info("No interpolation table found. Run `python -m src.cli interpolate ...` first.")
            return

        df = interpolation_df.copy()
        if df['dimension'].notna().any():
            dimensions = sorted(df['dimension'].dropna().unique())
            dimension = st.sidebar.selectbox("Latent dimension", options=dimensions)
            df = df[df['dimension'] == dimension]
        st.dataframe(df[['step', 'subject', 'relation', 'object']], use_container_width=True)

    except Exception as e:
        st.error(f"Failed to load reports: {e}")

if __name__ == "__main__":
    main()
