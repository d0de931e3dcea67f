import numpy as np

from optdec import CallCounter, RunTrace, summary_from_trace


def make_trace():
    counter = CallCounter()
    trace = RunTrace({"config_hash": "abc123", "seed": 7, "R0": "2.5"})
    trace.record(0, 0.0, counter)
    counter.grad_calls += 3
    counter.comm_rounds += 2
    trace.record(1, 0.5, counter, f_gap=0.125, grad_norm=1.0)
    counter.grad_calls += 4
    trace.record(2, 1.309, counter, f_gap=0.01)
    trace.flag("example diagnostic")
    return trace


def test_counters_nondecreasing():
    trace = make_trace()
    for col in ("grad_calls", "stoch_samples", "matvec_AtA", "comm_rounds"):
        vals = trace.column(col)
        assert (np.diff(vals) >= 0).all()


def test_csv_round_trip(tmp_path):
    trace = make_trace()
    path = tmp_path / "trace.csv"
    trace.to_csv(path)
    back = RunTrace.from_csv(path)
    assert back.metadata["config_hash"] == "abc123"
    assert back.flags == ["example diagnostic"]
    assert back.rows == trace.rows


def test_csv_formatting_stability(tmp_path):
    trace = make_trace()
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    trace.to_csv(p1)
    trace.to_csv(p2)
    assert p1.read_bytes() == p2.read_bytes()
    text = p1.read_text()
    assert text.splitlines()[-1].startswith("2,")
    # decimal point, comma separator, no locale artifacts
    assert ";" not in text


def test_summary_recomputation_from_csv(tmp_path):
    trace = make_trace()
    path = tmp_path / "trace.csv"
    trace.to_csv(path)
    summary_direct = summary_from_trace(trace)
    summary_csv = summary_from_trace(RunTrace.from_csv(path))
    assert summary_direct == summary_csv
    assert summary_csv["certificate_bound"] == 1.5 * 2.5 ** 2 / 1.309


def test_missing_metrics_render_empty(tmp_path):
    trace = make_trace()
    text = trace.to_csv_text()
    header = text.splitlines()[-3]
    assert header.split(",")[3] == ""  # dual_gap never recorded
