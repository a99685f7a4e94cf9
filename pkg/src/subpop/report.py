"""Per-epoch training records and the shared metric-log format.

Metric logs are tab-separated with columns
``epoch  split  avg_acc  worst_acc  risk`` (header row included); the
risk column carries the method's own training objective and appears on
train rows only.  The same format is used by every trainer so stability
plots can be produced uniformly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adapter import AdapterMLP
from .zeroshot import EvalReport

LOG_COLUMNS = ("epoch", "split", "avg_acc", "worst_acc", "risk")


@dataclass
class EpochRow:
    epoch: int
    risk: float
    reports: dict[str, EvalReport] = field(default_factory=dict)


@dataclass
class TrainReport:
    """Per-epoch metrics plus the selected checkpoint (early stopping)."""

    method: str
    rows: list[EpochRow] = field(default_factory=list)
    ring: list[tuple[AdapterMLP, ...]] = field(default_factory=list)
    selected_epoch: int = -1
    checkpoint_id: str = ""
    sample_weights: np.ndarray | None = None
    phase1_losses: np.ndarray | None = None
    identified: np.ndarray | None = None
    phase1: "TrainReport | None" = None

    def series(self, split: str, metric: str) -> list[float]:
        """Extract one metric's trajectory, e.g. series('test', 'worst_group_acc')."""
        out = []
        for row in self.rows:
            rep = row.reports.get(split)
            if rep is not None:
                out.append(getattr(rep, metric))
        return out


def format_metric_log(report: TrainReport, config_hash: str | None = None) -> str:
    lines = []
    if config_hash:
        lines.append(f"# config_hash={config_hash}")
    lines.append("\t".join(LOG_COLUMNS))
    for row in report.rows:
        lines.append(
            f"{row.epoch}\ttrain\t" + _fmt_report(row.reports.get("train")) + f"\t{row.risk!r}"
        )
        for split in ("val", "test"):
            rep = row.reports.get(split)
            if rep is not None:
                lines.append(f"{row.epoch}\t{split}\t" + _fmt_report(rep) + "\tnan")
    return "\n".join(lines) + "\n"


def _fmt_report(rep: EvalReport | None) -> str:
    if rep is None:
        return "nan\tnan"
    return f"{rep.average_acc!r}\t{rep.worst_group_acc!r}"


def write_metric_log(report: TrainReport, path: str | Path, config_hash: str | None = None) -> None:
    Path(path).write_text(format_metric_log(report, config_hash))


def read_metric_log(path: str | Path) -> list[dict[str, str]]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if parts[0] == "epoch":
            continue
        rows.append(dict(zip(LOG_COLUMNS, parts)))
    return rows
