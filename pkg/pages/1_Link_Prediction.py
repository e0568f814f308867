"""
Link prediction page - filtered MRR, Hits@k and rank distribution.
"""

import streamlit as st
import plotly.express as px

from src.run_reports import ReportProcessor

# Page configuration
st.set_page_config(
    page_title="Link Prediction",
    page_icon="🎯",
    layout="wide"
)

@st.cache_data(ttl=600)
def load_lp_data():
    """Load link prediction data with caching."""
    processor = ReportProcessor()
    return processor.prepare_dashboard_data()

def main():
    st.title("🎯 Link Prediction")
    st.markdown("---")

    try:
        data = load_lp_data()
        report_df = data['lp_report']
        ranks_long = data['ranks_long']

        if report_df.empty:
            st.warning("No link prediction report found. Run `python -m src.cli eval-lp ...` first.")
            return

        results = dict(report_df[report_df['section'] == 'result'][['key', 'value']].values)
        metric_keys = [key for key in ['mrr', 'hits@1', 'hits@3', 'hits@10'] if key in results]
        for col, key in zip(st.columns(len(metric_keys)), metric_keys):
            with col:
                st.metric(key.upper() if key == 'mrr' else key, f"{float(results[key]):.4f}")
        st.caption(f"{results.get('count', '?')} triples, filtered={results.get('filtered', '?')}")

        st.markdown("---")

        if not ranks_long.empty:
            st.subheader("Rank distribution")
            log_x = st.sidebar.checkbox("Log-scale ranks", value=True)
            fig_rank = px.histogram(ranks_long, x='rank', color='side', barmode='overlay',
                                    log_x=log_x, nbins=50, title='Head and tail ranks')
            st.plotly_chart(fig_rank, use_container_width=True)

            by_relation = ranks_long.groupby('r')['reciprocal_rank'].mean().reset_index()
            by_relation = by_relation.rename(columns={'reciprocal_rank': 'mrr'})
            fig_rel = px.bar(by_relation.sort_values('mrr', ascending=False), x='r', y='mrr',
                             title='MRR per relation index')
            st.plotly_chart(fig_rel, use_container_width=True)

        with st.expander("Run configuration"):
            st.dataframe(report_df[report_df['section'] == 'config'][['key', 'value']], use_container_width=True)

    except Exception as e:
        st.error(f"Failed to load reports: {e}")

    st.markdown("---")

    # Export
    if st.button("Create Excel workbook", use_container_width=True):
        try:
            processor = ReportProcessor()
            output_path = processor.export_to_excel()
            st.success("Workbook created")
            with open(output_path, 'rb') as f:
                st.download_button(
                    label="Download Excel",
                    data=f,
                    file_name=output_path.name,
                    mime="application/vnd.openxmlformats-officedocument.spreadsheetml.sheet",
                    use_container_width=True
                )
        except Exception as e:
            st.error(f"Excel export failed: {e}")

if __name__ == "__main__":
    main()
