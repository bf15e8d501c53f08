import pytest

from flowmigrate.errors import MetricsError, NeverStabilizedError, NoSinkOutputError
from flowmigrate.metrics import (
    CSV_HEADER,
    RateSeries,
    Timeline,
    compute_catchup,
    compute_drain_capture_duration,
    compute_recovery,
    compute_rebalance_duration,
    compute_report,
    compute_stabilization,
    compute_restore_duration,
    count_replays,
    exactly_once_audit,
    replay_bursts,
)
from flowmigrate.model import load_bundled_dag


def migration_timeline(request_s=180, rebalance_start_s=182, rebalance_done_s=189,
                       first_exit_s=195):
    """Minimal hand-built timeline around one migration."""
    tl = Timeline()
    tl.record_emit(0, 100, 0, 0)
    tl.record_sink_exit(200, 101, 0, 0, False)
    tl.record_phase(request_s * 1000, "REQUEST")
    tl.record_phase(rebalance_start_s * 1000, "REBALANCE_START")
    tl.record_phase(rebalance_done_s * 1000, "REBALANCE_DONE")
    tl.record_sink_exit(first_exit_s * 1000, 102, 1, 0, False)
    return tl


class TestRestore:
    def test_fifteen_second_example(self):
        # Request at 180s, first post-rebalance sink exit at 195s -> 15s.
        tl = migration_timeline()
        assert compute_restore_duration(tl) == 15_000

    def test_continuous_sink_output_gives_small_value(self):
        tl = migration_timeline()
        # Output flowing through the non-migrated path right as the
        # rebalance completes.
        tl.record_sink_exit(189_050, 103, 2, 0, False)
        assert compute_restore_duration(tl) == 9_050

    def test_pre_rebalance_drain_exits_do_not_count(self):
        tl = migration_timeline()
        tl.record_sink_exit(180_500, 104, 3, 0, False)  # still draining out
        assert compute_restore_duration(tl) == 15_000

    def test_no_output_after_rebalance_is_an_error(self):
        tl = Timeline()
        tl.record_phase(180_000, "REQUEST")
        tl.record_phase(189_000, "REBALANCE_START")
        tl.record_phase(190_000, "REBALANCE_DONE")
        with pytest.raises(NoSinkOutputError):
            compute_restore_duration(tl)

    def test_missing_request_marker(self):
        with pytest.raises(MetricsError):
            compute_restore_duration(Timeline())


class TestDrainCapture:
    def test_duration_between_markers(self):
        tl = migration_timeline(request_s=180, rebalance_start_s=181.875)
        assert compute_drain_capture_duration(tl, "DCR") == 1875

    def test_not_applicable_for_dsm(self):
        assert compute_drain_capture_duration(migration_timeline(), "DSM") is None

    def test_rebalance_duration(self):
        tl = migration_timeline(rebalance_start_s=182, rebalance_done_s=189.26)
        assert compute_rebalance_duration(tl) == 7260


class TestCatchupRecovery:
    def test_catchup_is_last_epoch0_exit(self):
        tl = migration_timeline()
        tl.record_sink_exit(200_000, 7, 5, 0, False)
        tl.record_sink_exit(230_000, 8, 6, 0, True)   # replayed old event
        tl.record_sink_exit(260_000, 9, 7, 1, False)  # new epoch, later
        assert compute_catchup(tl, "DSM") == 50_000
        assert compute_catchup(tl, "CCR") == 50_000

    def test_catchup_not_applicable_for_dcr(self):
        assert compute_catchup(migration_timeline(), "DCR") is None

    def test_recovery_only_for_dsm(self):
        tl = migration_timeline()
        tl.record_sink_exit(240_000, 8, 6, 0, True)
        assert compute_recovery(tl, "DSM") == 60_000
        assert compute_recovery(tl, "DCR") is None
        assert compute_recovery(tl, "CCR") is None


class TestStabilization:
    def build(self, rates, request_s=10):
        tl = Timeline()
        tl.record_phase(request_s * 1000, "REQUEST")
        tl.record_phase(request_s * 1000 + 10, "REBALANCE_START")
        tl.record_phase(request_s * 1000 + 20, "REBALANCE_DONE")
        event = 0
        for second, rate in enumerate(rates):
            for k in range(rate):
                tl.record_sink_exit(second * 1000 + k, event, event, 1, False)
                event += 1
        return tl

    def test_immediately_stable_returns_request(self):
        tl = self.build([8] * 100)
        assert compute_stabilization(tl, 8.0, 100_000) == 0

    def test_band_is_twenty_percent(self):
        # 32 ev/s expected: 26..38 in-band, 39 out.
        rates = [39] * 30 + [32] * 80
        tl = self.build(rates, request_s=10)
        assert compute_stabilization(tl, 32.0, 110_000) == 20_000

    def test_oscillating_output_never_stabilizes(self):
        rates = [0, 64] * 50
        tl = self.build(rates)
        with pytest.raises(NeverStabilizedError):
            compute_stabilization(tl, 32.0, 100_000)

    def test_window_must_fit_run(self):
        tl = self.build([8] * 40)  # only 30s of stable data after request
        with pytest.raises(NeverStabilizedError):
            compute_stabilization(tl, 8.0, 40_000)


class TestAudit:
    def test_conservation_without_migration(self):
        tl = Timeline()
        for i in range(100):
            tl.record_emit(i * 125, i + 1, i, 0)
            tl.record_sink_exit(i * 125 + 300, i + 1000, i, 0, False)
        assert exactly_once_audit(tl, load_bundled_dag("linear")) == []

    def test_loss_detected(self):
        tl = Timeline()
        tl.record_emit(0, 1, 0, 0)
        failures = exactly_once_audit(tl, load_bundled_dag("linear"))
        assert failures and failures[0].observed == 0

    def test_duplicates_fail_equality_but_pass_at_least(self):
        tl = Timeline()
        tl.record_emit(0, 1, 0, 0)
        tl.record_sink_exit(300, 2, 0, 0, False)
        tl.record_sink_exit(400, 3, 0, 0, True)
        dag = load_bundled_dag("linear")
        assert exactly_once_audit(tl, dag)
        assert exactly_once_audit(tl, dag, at_least=True) == []

    def test_grid_multiplicity_expectation(self):
        tl = Timeline()
        tl.record_emit(0, 1, 0, 0)
        for k in range(4):
            tl.record_sink_exit(900 + k, 10 + k, 0, 0, False)
        assert exactly_once_audit(tl, load_bundled_dag("grid")) == []


class TestReplaysAndBursts:
    def test_count_replays_since_request(self):
        tl = Timeline()
        tl.record_phase(100_000, "REQUEST")
        tl.record_replay(90_000, 1, 0, 0)
        tl.record_replay(130_000, 2, 1, 0)
        assert count_replays(tl) == 1

    def test_bursts_clustered_and_filtered(self):
        tl = Timeline()
        for k in range(10):
            tl.record_replay(30_000 + k, k, k, 0)
        for k in range(8):
            tl.record_replay(60_000 + k, 100 + k, k, 0)
        tl.record_replay(90_000, 200, 0, 0)  # lone replay: noise
        bursts = replay_bursts(tl, min_size=5)
        assert [(ts, n) for ts, n in bursts] == [(30_000, 10), (60_000, 8)]


class TestCsv:
    def test_round_trip_is_exact(self, tmp_path):
        tl = migration_timeline()
        tl.record_replay(200_000, 5, 4, 0)
        path = tmp_path / "timeline.csv"
        tl.write_csv(path)
        text = path.read_text()
        assert text.splitlines()[0] == CSV_HEADER
        back = Timeline.from_csv(path)
        assert back.records == tl.records
        assert back.to_csv() == text


class TestRateSeries:
    def test_windows_tile_without_gaps(self):
        tl = Timeline()
        for i in range(40):
            tl.record_emit(i * 125, i, i, 0)
            tl.record_sink_exit(i * 125 + 200, 100 + i, i, 0, False)
        series = RateSeries(tl, horizon_ms=5_000)
        assert len(series.input_counts) == 5
        assert sum(series.input_counts) == 40
        assert series.input_counts[0] == 8

    def test_latency_pairs_exit_with_first_emission(self):
        tl = Timeline()
        tl.record_emit(0, 1, 0, 0)
        tl.record_replay(30_000, 1, 0, 0)
        tl.record_sink_exit(30_500, 2, 0, 0, True)
        series = RateSeries(tl, horizon_ms=31_000)
        latencies = series.latency_series()
        # Latency includes the replay delay: measured from first emission.
        assert latencies == [(30_500, 30_500.0)]


class TestReportShape:
    def test_na_metrics_serialized_as_null(self, suite_cache):
        run = suite_cache.get("linear_scalein", "DCR")
        text = run.report.to_json()
        assert '"catchupTimeMs": null' in text
        assert '"recoveryTimeMs": null' in text

    def test_report_recomputation_is_idempotent(self, suite_cache):
        run = suite_cache.get("linear_scalein", "CCR")
        again = compute_report(run.timeline, run.config)
        assert again == run.report
