"""Per-round metrics, CSV export and cross-run summary tables."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .schedule import Phase

COLUMNS = (
    "round",
    "phase",
    "sparsity",
    "zero_param_ratio",
    "bytes_down",
    "bytes_up",
    "train_loss",
    "eval_accuracy",
    "wall_time",
)


@dataclass(frozen=True)
class RoundRecord:
    round: int
    phase: Phase
    sparsity: float
    zero_param_ratio: float
    bytes_down: int
    bytes_up: int
    train_loss: float
    eval_accuracy: float
    wall_time: float | None = None  # None when timing is not recorded


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, Phase):
        return value.value
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def write_metrics(records: Sequence[RoundRecord], path) -> Path:
    """Write records as CSV: header plus one line per round, floats at 6 significant digits.

    ``wall_time`` is left empty unless it was recorded, so that runs with
    equal seeds produce byte-identical files.
    """
    if not records:
        raise ValueError("no records to write")
    rounds = [r.round for r in records]
    if rounds != sorted(rounds) or len(set(rounds)) != len(rounds):
        raise ValueError("round indices must be strictly increasing")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(COLUMNS)
        for rec in records:
            w.writerow([_fmt(getattr(rec, c)) for c in COLUMNS])
    return path


def read_metrics(path) -> list[RoundRecord]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or tuple(reader.fieldnames[: len(COLUMNS)]) != COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        out = []
        try:
            for row in reader:
                out.append(
                    RoundRecord(
                        round=int(row["round"]),
                        phase=Phase(row["phase"]),
                        sparsity=float(row["sparsity"]),
                        zero_param_ratio=float(row["zero_param_ratio"]),
                        bytes_down=int(row["bytes_down"]),
                        bytes_up=int(row["bytes_up"]),
                        train_loss=float(row["train_loss"]),
                        eval_accuracy=float(row["eval_accuracy"]),
                        wall_time=float(row["wall_time"]) if row["wall_time"] else None,
                    )
                )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}: malformed metrics row ({exc})") from None
    if not out:
        raise ValueError(f"{path}: no data rows")
    return out


@dataclass(frozen=True)
class RunSummary:
    label: str
    sparsity: float
    final_accuracy: float
    final_zero_param_ratio: float
    total_bytes: int
    rounds: int


def summarize(label: str, records: Sequence[RoundRecord]) -> RunSummary:
    last = records[-1]
    return RunSummary(
        label=label,
        sparsity=last.sparsity,
        final_accuracy=last.eval_accuracy,
        final_zero_param_ratio=last.zero_param_ratio,
        total_bytes=sum(r.bytes_down + r.bytes_up for r in records),
        rounds=last.round,
    )


def _label(path: Path) -> str:
    return path.parent.name if path.name == "metrics.csv" and path.parent.name else path.stem


def report(paths: Iterable) -> tuple[str, list[dict]]:
    """Summarise metrics CSVs, one row per run, sorted by final sparsity.

    Returns the plain-text table and the same rows as JSON-ready dicts.
    """
    paths = [Path(p) for p in paths]
    if not paths:
        raise ValueError("report needs at least one metrics file")
    rows = [summarize(_label(p), read_metrics(p)) for p in paths]
    rows.sort(key=lambda r: (r.sparsity, r.label))
    header = f"{'run':<24} {'sparsity':>8} {'accuracy':>9} {'zero_ratio':>10} {'total_bytes':>12}"
    lines = [header, "-" * len(header)]
    for r in rows:
        acc = "nan" if math.isnan(r.final_accuracy) else f"{r.final_accuracy:.4f}"
        lines.append(f"{r.label:<24} {r.sparsity:>8.3f} {acc:>9} {r.final_zero_param_ratio:>10.4f} {r.total_bytes:>12d}")
    return "\n".join(lines), [asdict(r) for r in rows]


def write_report(paths: Iterable, out_dir) -> tuple[str, list[dict]]:
    text, rows = report(paths)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.txt").write_text(text + "\n", encoding="utf-8")
    (out_dir / "report.json").write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    return text, rows
