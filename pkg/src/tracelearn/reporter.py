"""Report generation for cross-validation results."""

import csv
import json
from pathlib import Path
from typing import Any

from .evaluation import EvalReport

CSV_FIELDS = ("fold", "train_runs", "test_runs", "tp", "fn", "tn", "fp", "recall", "selectivity")


def _percent(value: float | None) -> str:
    return "n/a" if value is None else f"{value * 100:.1f}%"


class Reporter:
    """Writes report.json and folds.csv, and renders the terminal table."""

    def __init__(self, out_dir: str | Path):
        self.out_dir = Path(out_dir)

    def generate_summary(self, report: EvalReport) -> dict[str, Any]:
        """Machine-readable record of the report."""
        return report.to_dict()

    def render_table(self, report: EvalReport) -> str:
        lines = [
            f"{'fold':>4}  {'train':>5}  {'test':>5}  {'TP':>4}  {'FN':>4}  {'TN':>4}  {'FP':>4}"
            f"  {'recall':>8}  {'select.':>8}",
        ]
        for fold in report.folds:
            lines.append(
                f"{fold.fold:>4}  {fold.train_runs:>5}  {fold.test_runs:>5}  {fold.tp:>4}"
                f"  {fold.fn:>4}  {fold.tn:>4}  {fold.fp:>4}"
                f"  {_percent(fold.recall):>8}  {_percent(fold.selectivity):>8}"
            )
        lines.append("-" * len(lines[0]))
        lines.append(
            f"{'mean':>4}  {'':>5}  {'':>5}  {'':>4}  {'':>4}  {'':>4}  {'':>4}"
            f"  {_percent(report.mean_recall):>8}  {_percent(report.mean_selectivity):>8}"
        )
        return "\n".join(lines)

    def write_summary(self, report: EvalReport) -> Path:
        """Write report.json to the output directory."""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        summary_path = self.out_dir / "report.json"
        with open(summary_path, "w") as f:
            json.dump(self.generate_summary(report), f, indent=2)
            f.write("\n")
        return summary_path

    def write_csv(self, report: EvalReport) -> Path:
        """Write the per-fold confusion counts to folds.csv."""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = self.out_dir / "folds.csv"
        with open(csv_path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=CSV_FIELDS, extrasaction="ignore")
            writer.writeheader()
            for fold in report.folds:
                row = fold.to_dict()
                row["recall"] = "" if fold.recall is None else repr(fold.recall)
                row["selectivity"] = "" if fold.selectivity is None else repr(fold.selectivity)
                writer.writerow(row)
        return csv_path

    def write_all(self, report: EvalReport) -> list[Path]:
        return [self.write_summary(report), self.write_csv(report)]
