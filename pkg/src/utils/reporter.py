"""レポート生成

評価結果（EvalReport）を JSON・比較 CSV・整列テキスト表で出力する。
"""
import json
from pathlib import Path
from typing import List, Optional, Sequence

import pandas as pd

from src.errors import DataError
from src.models import EvalReport


def threshold_column(threshold: float) -> str:
    """0.05 → 'AP@5'"""
    return f"AP@{int(round(threshold * 100))}"


def load_report(path: str) -> EvalReport:
    """レポート JSON を読み込む

    Raises:
        DataError: ファイルがない、または壊れている
    """
    report_path = Path(path)
    if not report_path.exists():
        raise DataError(f"Report not found: {report_path}")
    try:
        with open(report_path, 'r', encoding='utf-8') as f:
            return EvalReport.from_dict(json.load(f))
    except (json.JSONDecodeError, KeyError, ValueError) as e:
        raise DataError(f"Invalid report {report_path}: {e}") from e


class Reporter:
    """レポート生成クラス

    EvalReport のリストから JSON / CSV / テキスト表を生成する。
    """

    def __init__(self, config, logger):
        """初期化

        Args:
            config: OutputConfig インスタンス
            logger: ロガーインスタンス
        """
        self.config = config
        self.logger = logger

    def write_report(self, report: EvalReport, path: str) -> Path:
        """レポートを JSON で書き出す"""
        output_path = Path(path)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        with open(output_path, 'w', encoding='utf-8') as f:
            json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        self.logger.info(f"Report written: {output_path} (AP_avg={report.ap_avg:.4f})")
        return output_path

    def comparison_frame(self, reports: Sequence[EvalReport], labels: Optional[Sequence[str]] = None) -> pd.DataFrame:
        """モデル行 × 閾値列の表（入力順を保つ）

        Args:
            reports: EvalReport のリスト
            labels: 行ラベル（省略時は model_id）

        Returns:
            DataFrame（AP は [0, 1] の値のまま、ap_avg が最後の列）
        """
        if labels is not None and len(labels) != len(reports):
            raise ValueError(f"{len(labels)} labels for {len(reports)} reports")
        rows = []
        for index, report in enumerate(reports):
            row = {'model': labels[index] if labels is not None else report.model_id, 'tau_a': report.tau_a}
            for threshold, value in report.ap.items():
                row[threshold_column(threshold)] = value
            row['ap_avg'] = report.ap_avg
            row['n_clips'] = report.n_clips
            row['protocol'] = report.protocol
            rows.append(row)
        df = pd.DataFrame(rows)
        ordered = ['model', 'tau_a'] + [c for c in df.columns if c.startswith('AP@')] + ['ap_avg', 'n_clips', 'protocol']
        return df[ordered]

    def write_comparison_csv(self, reports: Sequence[EvalReport], path: str,
                             labels: Optional[Sequence[str]] = None) -> Path:
        """比較表を CSV で書き出す"""
        output_path = Path(path)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        self.comparison_frame(reports, labels).to_csv(output_path, index=False, encoding='utf-8')
        self.logger.info(f"Comparison CSV generated: {output_path} ({len(reports)} rows)")
        return output_path

    def format_table(self, reports: Sequence[EvalReport], labels: Optional[Sequence[str]] = None) -> str:
        """整列テキスト表（AP はパーセント表示）"""
        df = self.comparison_frame(reports, labels).drop(columns=['n_clips', 'protocol'])
        ap_columns = [c for c in df.columns if c.startswith('AP@')] + ['ap_avg']
        df[ap_columns] = df[ap_columns] * 100.0
        df = df.rename(columns={'ap_avg': 'AP_avg'})
        return df.to_string(index=False, float_format=lambda v: f"{v:.1f}")

    def generate_statistics(self, reports: Sequence[EvalReport]) -> dict:
        """統計情報を生成する"""
        if not reports:
            return {}
        best = max(reports, key=lambda r: r.ap_avg)
        return {
            'num_reports': len(reports),
            'total_clips': sum(r.n_clips for r in reports),
            'total_excluded': sum(r.n_excluded for r in reports),
            'best_model': best.model_id,
            'best_ap_avg': best.ap_avg,
            'mean_ap_avg': sum(r.ap_avg for r in reports) / len(reports),
        }

    def print_statistics(self, reports: List[EvalReport]):
        """統計情報をログ出力する"""
        stats = self.generate_statistics(reports)

        if not stats:
            self.logger.warning("No statistics to print")
            return

        self.logger.info("=" * 60)
        self.logger.info("Evaluation Statistics")
        self.logger.info("=" * 60)
        self.logger.info(f"Reports:        {stats['num_reports']}")
        self.logger.info(f"Clips scored:   {stats['total_clips']:,}")
        self.logger.info(f"Clips excluded: {stats['total_excluded']:,}")
        self.logger.info("-" * 60)
        self.logger.info(f"Best AP_avg:    {stats['best_ap_avg'] * 100:5.1f} ({stats['best_model']})")
        self.logger.info(f"Mean AP_avg:    {stats['mean_ap_avg'] * 100:5.1f}")
        self.logger.info("=" * 60)
