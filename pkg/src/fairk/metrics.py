"""Persistence of per-round metrics.

``metrics.jsonl`` holds one :class:`~fairk.training.RoundMetrics` record
per line and is flushed at least every ``flush_every`` rounds, so an
aborted run keeps what it already produced. ``summary.csv`` is written
when the stream ends, whether normally or through an exception.
"""
from __future__ import annotations

import csv
import json
import math
import time
from pathlib import Path
from typing import Iterable, List, Optional

from .training import RoundMetrics

METRICS_FILE = "metrics.jsonl"
SUMMARY_FILE = "summary.csv"
SUMMARY_FIELDS = ("policy", "rounds_completed", "status", "final_train_loss", "final_test_accuracy",
                  "mean_avg_aou", "max_aou", "wall_time")


def _dumps(record: dict) -> str:
    # floats use repr, so equal runs produce equal bytes
    return json.dumps(record, separators=(",", ":"), allow_nan=False)


def summarize(rows: List[RoundMetrics], status: str, wall_time: float, policy: Optional[str] = None) -> dict:
    last = rows[-1] if rows else None
    return {
        "policy": last.policy if last else (policy or ""),
        "rounds_completed": last.round + 1 if last else 0,
        "status": status,
        "final_train_loss": last.train_loss if last else math.nan,
        "final_test_accuracy": last.test_accuracy if last else math.nan,
        "mean_avg_aou": sum(r.avg_aou for r in rows) / len(rows) if rows else math.nan,
        "max_aou": max(r.max_aou for r in rows) if rows else 0,
        "wall_time": wall_time,
    }


def write_summary(path, summaries: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        w.writeheader()
        for s in summaries:
            w.writerow(s)


def persist_metrics(stream: Iterable[RoundMetrics], out_dir, flush_every: int = 10,
                    policy: Optional[str] = None) -> List[RoundMetrics]:
    """Write ``stream`` to ``out_dir/metrics.jsonl`` and ``out_dir/summary.csv``.

    Exceptions raised by the stream (divergence, interrupts) or by the
    file system propagate after the summary has been written with a
    status naming the error. Returns the consumed records.
    """
    if flush_every < 1:
        raise ValueError("flush_every must be at least 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows: List[RoundMetrics] = []
    status = "completed"
    start = time.perf_counter()
    try:
        with open(out / METRICS_FILE, "w") as fh:
            for m in stream:
                fh.write(_dumps(m.record()) + "\n")
                rows.append(m)
                if len(rows) % flush_every == 0:
                    fh.flush()
    except BaseException as exc:
        status = f"aborted: {type(exc).__name__}: {exc}".replace("\n", " ")
        raise
    finally:
        write_summary(out / SUMMARY_FILE, [summarize(rows, status, time.perf_counter() - start, policy)])
    return rows


def read_metrics(path) -> List[RoundMetrics]:
    path = Path(path)
    if path.is_dir():
        path = path / METRICS_FILE
    with open(path) as fh:
        return [RoundMetrics.from_record(json.loads(line)) for line in fh if line.strip()]


def read_summary(path) -> List[dict]:
    path = Path(path)
    if path.is_dir():
        path = path / SUMMARY_FILE
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
