"""
Report processor feeding the dashboard: loads training logs, link-prediction
reports, parameter tables and experiment outputs from the report directory.
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import pandas as pd

import config
from src.eval_lp import read_key_values

logger = logging.getLogger(__name__)

REPORT_FILES = {
    'training': 'train_log.tsv',
    'lp_report': 'lp_report.txt',
    'ranks': 'lp_ranks.tsv',
    'params': 'params.tsv',
    'generation': 'generation_report.txt',
    'interpolation': 'interpolation.tsv',
}


class ReportProcessor:
    """Loads and summarises run outputs."""

    def __init__(self, report_dir: Optional[Union[str, Path]] = None):
        self.report_dir = Path(report_dir) if report_dir is not None else config.REPORT_DIR

    def _path(self, key: str) -> Path:
        return self.report_dir / REPORT_FILES[key]

    def _load_tsv(self, key: str) -> pd.DataFrame:
        path = self._path(key)
        if not path.exists():
            logger.warning(f"{path.name} not found in {self.report_dir}")
            return pd.DataFrame()
        df = pd.read_csv(path, sep='\t')
        logger.info(f"Loaded {len(df)} rows from {path.name}")
        return df

    def _load_key_values(self, key: str) -> pd.DataFrame:
        """key=value report as a two-column frame, config echo split off by prefix."""
        path = self._path(key)
        if not path.exists():
            logger.warning(f"{path.name} not found in {self.report_dir}")
            return pd.DataFrame(columns=['key', 'value', 'section'])
        values = read_key_values(path)
        df = pd.DataFrame(list(values.items()), columns=['key', 'value'])
        df['section'] = np.where(df['key'].str.startswith('config.'), 'config', 'result')
        df['key'] = df['key'].str.replace(r'^config\.', '', regex=True)
        return df

    def load_training_log(self) -> pd.DataFrame:
        return self._load_tsv('training')

    def load_lp_report(self) -> pd.DataFrame:
        return self._load_key_values('lp_report')

    def load_rank_table(self) -> pd.DataFrame:
        return self._load_tsv('ranks')

    def load_param_table(self) -> pd.DataFrame:
        return self._load_tsv('params')

    def load_generation_report(self) -> pd.DataFrame:
        return self._load_key_values('generation')

    def load_interpolation(self) -> pd.DataFrame:
        return self._load_tsv('interpolation')

    def rank_long_format(self, ranks: pd.DataFrame) -> pd.DataFrame:
        """
        Head and tail ranks stacked into one column.

        Args:
            ranks: Rank table with head_rank and tail_rank columns

        Returns:
            DataFrame with columns s, r, o, side, rank, reciprocal_rank
        """
        if ranks.empty:
            return pd.DataFrame()
        df = ranks.melt(id_vars=['s', 'r', 'o'], value_vars=['head_rank', 'tail_rank'],
                        var_name='side', value_name='rank')
        df['side'] = df['side'].str.replace('_rank', '', regex=False)
        df['reciprocal_rank'] = 1.0 / df['rank']
        return df

    def summarize_params(self, params: pd.DataFrame) -> pd.DataFrame:
        """Per-layer statistics of parameter values."""
        if params.empty:
            return pd.DataFrame()
        summary = params.groupby(['layer', 'kind'])['value'].agg(['count', 'mean', 'std', 'min', 'max']).reset_index()
        summary['abs_mean'] = params.groupby(['layer', 'kind'])['value'].apply(lambda v: v.abs().mean()).values
        return summary

    def prepare_dashboard_data(self) -> Dict[str, pd.DataFrame]:
        """
        Prepare all data needed for dashboard.

        Returns:
            Dictionary of DataFrames for dashboard
        """
        logger.info("Preparing dashboard data")
        ranks = self.load_rank_table()
        params = self.load_param_table()
        data = {
            'training': self.load_training_log(),
            'lp_report': self.load_lp_report(),
            'ranks': ranks,
            'ranks_long': self.rank_long_format(ranks),
            'params': params,
            'params_summary': self.summarize_params(params),
            'generation': self.load_generation_report(),
            'interpolation': self.load_interpolation(),
        }
        logger.info("Dashboard data prepared")
        return data

    def export_to_excel(self, output_path: Optional[Union[str, Path]] = None) -> Path:
        """
        Export all report tables to one workbook.

        Args:
            output_path: Output file path (default: report directory)
        """
        if output_path is None:
            output_path = self.report_dir / "rgvae_reports.xlsx"
        output_path = Path(output_path)

        data = self.prepare_dashboard_data()
        sheets = {
            'Training': data['training'],
            'LP_Report': data['lp_report'],
            'Ranks': data['ranks'],
            'Parameters': data['params_summary'],
            'Generation': data['generation'],
            'Interpolation': data['interpolation'],
        }
        with pd.ExcelWriter(output_path, engine='openpyxl') as writer:
            for sheet_name, df in sheets.items():
                df.to_excel(writer, sheet_name=sheet_name, index=False)

        logger.info(f"Data exported to {output_path}")
        return output_path
