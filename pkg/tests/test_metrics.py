import pytest

from modserve.metrics import (
    JobRecord, MetricsError, MetricsLog, accuracy_histogram, export, read_log,
    summarize, window_stats,
)

W = 4_000_000  # default window, us


def record(jid, arrival_ms, size, slo, acc, completion_ms, dropped=False, violated=False):
    return JobRecord(
        id=jid,
        arrival_us=arrival_ms * 1000,
        size=size,
        accuracy_slo=slo,
        achieved_accuracy=acc,
        completion_us=None if completion_ms is None else completion_ms * 1000,
        dropped=dropped,
        violated=violated,
    )


@pytest.fixture()
def clean_window_log():
    records = [record(i, 10 * i, 1, 0.6, 0.8, 10 * i + 50) for i in range(40)]
    return MetricsLog(window_us=W, records=tuple(records))


@pytest.fixture()
def lossy_window_log():
    records = [record(i, 10 * i, 1, 0.6, 0.8, 10 * i + 50) for i in range(30)]
    records += [record(30 + i, 500 + i, 1, 0.6, None, None, dropped=True, violated=True)
                for i in range(10)]
    return MetricsLog(window_us=W, records=tuple(records))


class TestWindowStats:
    def test_clean_window(self, clean_window_log):
        (w,) = window_stats(clean_window_log)
        assert (w.throughput, w.violation_ratio) == (40, 0.0)

    def test_drops_count_as_violations(self, lossy_window_log):
        (w,) = window_stats(lossy_window_log)
        assert w.throughput == 30
        assert w.violation_ratio == 0.25

    def test_completions_attributed_to_completion_window(self):
        log = MetricsLog(window_us=W, records=(
            record(1, 3999, 2, 0.6, 0.8, 4001),
        ))
        first, second = window_stats(log)
        assert (first.arrived, first.throughput) == (2, 0)
        assert (second.arrived, second.throughput) == (0, 2)

    def test_no_window_leakage(self, lossy_window_log):
        stats = window_stats(lossy_window_log)
        assert sum(w.throughput for w in stats) == lossy_window_log.completed_requests
        assert sum(w.arrived for w in stats) == lossy_window_log.total_requests

    def test_ratios_bounded(self, lossy_window_log):
        for w in window_stats(lossy_window_log):
            assert 0.0 <= w.violation_ratio <= 1.0

    def test_empty_log(self):
        assert window_stats(MetricsLog(window_us=W, records=())) == []


class TestSummarize:
    def test_small_series(self):
        s = summarize([1, 2, 3, 4])
        assert s.median == 2.5
        assert s.mean == 2.5
        assert (s.minimum, s.maximum) == (1.0, 4.0)
        assert (s.q25, s.q75) == (1.75, 3.25)

    def test_constant_series(self):
        s = summarize([7, 7, 7])
        assert s.minimum == s.q25 == s.median == s.mean == s.q75 == s.maximum == 7.0

    def test_empty_series(self):
        with pytest.raises(MetricsError):
            summarize([])


class TestAccuracyHistogram:
    def test_single_bucket(self):
        log = MetricsLog(window_us=W, records=tuple(
            record(i, 0, 1, 0.6, 0.80, 100) for i in range(5)
        ))
        counts, edges, mean = accuracy_histogram(log, bins=4)
        assert counts.sum() == 5
        assert (counts > 0).sum() == 1
        assert mean == pytest.approx(0.80)

    def test_rescue_plan_accuracies(self):
        log = MetricsLog(window_us=W, records=(
            record(2, 10, 2, 0.71, 0.735, 100),
            record(3, 20, 2, 0.65, 0.685, 150),
        ))
        _, _, mean = accuracy_histogram(log)
        assert mean == pytest.approx(0.71)

    def test_dropped_jobs_excluded(self):
        log = MetricsLog(window_us=W, records=(
            record(1, 0, 1, 0.6, 0.8, 50),
            record(2, 0, 1, 0.6, None, None, dropped=True, violated=True),
        ))
        counts, _, mean = accuracy_histogram(log)
        assert counts.sum() == 1
        assert mean == pytest.approx(0.8)


class TestLogAggregates:
    def test_per_job_slo_holds_for_completed(self, clean_window_log):
        for r in clean_window_log.records:
            if r.achieved_accuracy is not None:
                assert r.achieved_accuracy >= r.accuracy_slo

    def test_violation_ratio(self, lossy_window_log):
        assert lossy_window_log.violation_ratio() == 0.25

    def test_jct(self):
        r = record(1, 10, 1, 0.6, 0.8, 60)
        assert r.jct_us == 50 * 1000
        assert record(2, 0, 1, 0.6, None, None, dropped=True).jct_us is None


class TestExport:
    def test_csv_round_trip_summaries(self, lossy_window_log, tmp_path):
        windows_path, jobs_path = export(lossy_window_log, tmp_path / "run", "csv")
        again = read_log(jobs_path)
        assert window_stats(again) == window_stats(lossy_window_log)
        assert again.violation_ratio() == lossy_window_log.violation_ratio()
        assert again.mean_job_accuracy() == lossy_window_log.mean_job_accuracy()

    def test_json_round_trip_identical(self, lossy_window_log, tmp_path):
        (path,) = export(lossy_window_log, tmp_path / "run", "json")
        assert read_log(path) == lossy_window_log

    def test_window_csv_schema(self, clean_window_log, tmp_path):
        windows_path, _ = export(clean_window_log, tmp_path / "run", "csv")
        header = windows_path.read_text().splitlines()[0]
        assert header == "window,throughput,violation_ratio"

    def test_job_rows_match_job_count(self, lossy_window_log, tmp_path):
        _, jobs_path = export(lossy_window_log, tmp_path / "run", "csv")
        rows = jobs_path.read_text().strip().splitlines()
        assert len(rows) - 1 == len(lossy_window_log.records)

    def test_unknown_format(self, clean_window_log, tmp_path):
        with pytest.raises(MetricsError):
            export(clean_window_log, tmp_path / "run", "parquet")
