import json
import math

import pytest

from fairk.metrics import persist_metrics, read_metrics, read_summary
from fairk.training import RoundMetrics


def fake_stream(n, fail_at=None, probe=None):
    for t in range(n):
        if t == fail_at:
            raise RuntimeError("simulated abort")
        if probe is not None:
            probe(t)
        yield RoundMetrics(round=t, policy="fair_k", train_loss=1.0 / (t + 1), test_loss=math.nan,
                           test_accuracy=0.1 * t, avg_aou=0.5 * t, max_aou=t, grad_sq_norm=2.0 ** -t,
                           participation=[t, 0, 1], wall_time=0.01)


def test_three_rounds(tmp_path):
    persist_metrics(fake_stream(3), tmp_path)
    assert len((tmp_path / "metrics.jsonl").read_text().splitlines()) == 3
    rows = read_summary(tmp_path)
    assert len(rows) == 1
    assert rows[0]["status"] == "completed" and rows[0]["rounds_completed"] == "3"


def test_abort_keeps_partial_lines(tmp_path):
    with pytest.raises(RuntimeError):
        persist_metrics(fake_stream(100, fail_at=5), tmp_path)
    assert len(read_metrics(tmp_path)) == 5
    summary = read_summary(tmp_path)[0]
    assert summary["rounds_completed"] == "5" and summary["status"].startswith("aborted: RuntimeError")


def test_flushed_every_ten_rounds(tmp_path):
    seen = {}

    def probe(t):
        if t in (10, 20):
            seen[t] = len((tmp_path / "metrics.jsonl").read_text().splitlines())

    persist_metrics(fake_stream(25, probe=probe), tmp_path)
    assert seen[10] >= 10 and seen[20] >= 20


def test_round_trip(tmp_path):
    written = persist_metrics(fake_stream(4), tmp_path)
    back = read_metrics(tmp_path / "metrics.jsonl")
    for a, b in zip(written, back):
        assert a.record() == b.record()
        assert math.isnan(b.test_loss)
    assert back[3].grad_sq_norm == 2.0 ** -3


def test_wall_time_not_in_records(tmp_path):
    persist_metrics(fake_stream(1), tmp_path)
    assert "wall_time" not in json.loads((tmp_path / "metrics.jsonl").read_text())


def test_unwritable_target_fails_immediately(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        persist_metrics(fake_stream(3), blocker)
