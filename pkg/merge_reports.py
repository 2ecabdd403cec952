#!/usr/bin/env python
"""seed ごとの評価レポートを統合

<実験名>_seed<k>.json の形で並んだレポートを実験ごとにまとめ、
各 AP 列と AP_avg の中央値を表にします。
"""
import glob
import re
from datetime import datetime
from pathlib import Path

import pandas as pd

from src.utils.reporter import load_report, threshold_column

SEED_SUFFIX = re.compile(r"_seed(\d+)$")

# 傾向確認に使う実験の組（左の中央値が右以上であること）
TREND_CHECKS = [
    ("Loss ablation", "full_tau025", "nao_only_tau025"),
    ("TTC monotonicity", "full_tau025", "full_tau100"),
    ("Architecture ordering", "full_tau025", "framewise_tau025"),
]


def collect_reports(pattern: str) -> pd.DataFrame:
    """レポート JSON を1行1レポートの表にする"""
    rows = []
    for path in sorted(glob.glob(pattern)):
        stem = Path(path).stem
        match = SEED_SUFFIX.search(stem)
        if not match:
            print(f"  ⚠️  Skipping {path} (no _seed<k> suffix)")
            continue
        report = load_report(path)
        row = {'experiment': stem[:match.start()], 'seed': int(match.group(1)), 'tau_a': report.tau_a}
        for threshold, value in report.ap.items():
            row[threshold_column(threshold)] = value
        row['ap_avg'] = report.ap_avg
        row['n_clips'] = report.n_clips
        rows.append(row)
        print(f"  ✓ {path}: AP_avg={report.ap_avg:.4f}")
    return pd.DataFrame(rows)


def median_table(df: pd.DataFrame) -> pd.DataFrame:
    """実験ごとの中央値（seed 数も付ける）"""
    value_columns = [c for c in df.columns if c.startswith('AP@')] + ['ap_avg']
    grouped = df.groupby('experiment', sort=True)
    medians = grouped[value_columns].median()
    medians.insert(0, 'seeds', grouped['seed'].nunique())
    return medians.reset_index()


def merge_reports(pattern: str = "output/trends/*_seed*.json", output_dir: str = "output"):
    """レポートを統合して中央値表と傾向確認を出力

    Args:
        pattern: レポート JSON のファイルパターン
        output_dir: 出力ディレクトリ
    """
    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    output_path = Path(output_dir)
    output_path.mkdir(parents=True, exist_ok=True)

    print("📊 Collecting per-seed reports...")
    df = collect_reports(pattern)
    if df.empty:
        print(f"❌ No report files found matching: {pattern}")
        return None

    table = median_table(df)
    table_output = output_path / f"trend_medians_{timestamp}.csv"
    table.to_csv(table_output, index=False, encoding='utf-8')

    print("\n" + "=" * 60)
    print("📈 Median over seeds")
    print("=" * 60)
    shown = table.copy()
    ap_columns = [c for c in shown.columns if c.startswith('AP@')] + ['ap_avg']
    shown[ap_columns] = shown[ap_columns] * 100.0
    print(shown.rename(columns={'ap_avg': 'AP_avg'}).to_string(index=False, float_format=lambda v: f"{v:.1f}"))

    medians = dict(zip(table['experiment'], table['ap_avg']))
    print("\n" + "=" * 60)
    print("🔍 Trend checks")
    print("=" * 60)
    for name, better, worse in TREND_CHECKS:
        if better not in medians or worse not in medians:
            print(f"  {name:22s}: skipped ({better} / {worse} missing)")
            continue
        margin = (medians[better] - medians[worse]) * 100.0
        status = "OK" if margin >= 0 else "NG"
        print(f"  {name:22s}: {status} ({better} - {worse} = {margin:+.1f} AP_avg points)")

    print(f"\n✅ Median table written: {table_output}")
    return table


if __name__ == "__main__":
    import argparse

    parser = argparse.ArgumentParser(description="seed ごとの評価レポートを統合")
    parser.add_argument(
        "--pattern",
        default="output/trends/*_seed*.json",
        help="レポート JSON のファイルパターン（デフォルト: output/trends/*_seed*.json）"
    )
    parser.add_argument(
        "--output-dir",
        default="output",
        help="出力ディレクトリ（デフォルト: output）"
    )

    args = parser.parse_args()

    merge_reports(args.pattern, args.output_dir)
