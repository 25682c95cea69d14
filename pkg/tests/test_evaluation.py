import math

import numpy as np
import pytest

from netcp.evaluation import (
    MetricTable,
    RunRecord,
    aggregate,
    classify_run,
    run_experiment,
)
from netcp.profiles import CalibrationProfile
from netcp.simulation import SbmSpec, ScenarioSpec, scenario1_spec


def record(alarm_time, delta, total_t, seed=0):
    delay, fa, cens = classify_run(alarm_time, delta, total_t)
    return RunRecord(
        seed=seed, spec_hash="x", alarm_time=alarm_time, delta=delta,
        delay=delay, false_alarm=fa, censored=cens,
    )


class TestClassification:
    def test_detection_after_change(self):
        assert classify_run(12, 10, 20) == (2.0, False, False)

    def test_alarm_at_change_counts_zero_delay(self):
        assert classify_run(10, 10, 20) == (0.0, False, False)

    def test_false_alarm(self):
        assert classify_run(9, 10, 20) == (None, True, False)

    def test_censored_contributes_t_minus_delta(self):
        assert classify_run(None, 10, 20) == (10.0, False, True)

    def test_no_change_scenarios(self):
        assert classify_run(5, None, 20) == (None, True, False)
        assert classify_run(None, None, 20) == (None, False, True)


class TestAggregate:
    def test_hand_computed_five_runs(self):
        # delays 2 and 4, one false alarm, one censored (delay 10), one at 0
        runs = [
            record(12, 10, 20),
            record(14, 10, 20),
            record(9, 10, 20),
            record(None, 10, 20),
            record(10, 10, 20),
        ]
        row = aggregate(runs, "sbm", 0.9, 0.05)
        assert row.n_runs == 5
        assert row.mean_delay == pytest.approx((2 + 4 + 10 + 0) / 4)
        assert row.pfa == pytest.approx(1 / 5)
        assert row.censored == 1
        delays = [2.0, 4.0, 10.0, 0.0]
        assert row.delay_stderr == pytest.approx(
            np.std(delays, ddof=1) / math.sqrt(4)
        )

    def test_all_censored(self):
        runs = [record(None, 10, 25) for _ in range(4)]
        row = aggregate(runs, "sbm", 0.9, 0.05)
        assert row.mean_delay == pytest.approx(15.0)
        assert row.pfa == 0.0
        assert row.censored == 4

    def test_order_independent(self):
        runs = [record(12, 10, 20), record(None, 10, 20), record(9, 10, 20)]
        a = aggregate(runs, "s", 0.9, 0.05)
        b = aggregate(runs[::-1], "s", 0.9, 0.05)
        assert (a.mean_delay, a.pfa, a.censored) == (b.mean_delay, b.pfa, b.censored)

    def test_invalid_runs_excluded_but_counted(self):
        runs = [record(12, 10, 20), record(13, 10, 20)]
        runs.append(
            RunRecord(seed=1, spec_hash="x", alarm_time=None, delta=10, delay=None,
                      false_alarm=False, censored=False, invalid=True, failure="boom")
        )
        row = aggregate(runs, "s", 0.9, 0.05)
        assert row.n_runs == 2
        assert row.invalid == 1


def tiny_spec(**kw):
    base = dict(n=16, total_t=12, pi=0.9, seed=3, delta=6)
    base.update(kw)
    return ScenarioSpec(kind=SbmSpec(), **base)


def fixed_profile(c_eps, n=16):
    return CalibrationProfile(
        n=n, rho=0.5, p=0.8, m=0.95, r=3, alpha=0.05, c_eps=c_eps
    )


class TestRunExperiment:
    def test_huge_threshold_censors_everything(self):
        row, records = run_experiment(
            tiny_spec(), n_reps=3, alpha=0.05,
            profile_source="shared-profile", shared_profile=fixed_profile(1e12),
        )
        assert row.pfa == 0.0
        assert row.censored == 3
        assert row.mean_delay == pytest.approx(12 - 6)

    def test_tiny_threshold_alarms_at_t2(self):
        row, records = run_experiment(
            tiny_spec(), n_reps=3, alpha=0.05,
            profile_source="shared-profile", shared_profile=fixed_profile(1e-12),
        )
        assert row.pfa == 1.0
        assert all(r.alarm_time == 2 for r in records)

    def test_calibrate_per_run_end_to_end(self):
        spec = tiny_spec(n=24, total_t=30, delta=None, seed=9)
        row, records = run_experiment(
            spec, n_reps=2, alpha=0.2, t_train=20, k_permutations=6, base_seed=5,
        )
        assert row.n_runs == 2
        assert all(not r.invalid for r in records)

    def test_deterministic_csv(self):
        spec = tiny_spec(n=20, total_t=16, delta=8)
        out = []
        for _ in range(2):
            row, _ = run_experiment(
                spec, n_reps=3, alpha=0.1, t_train=12, k_permutations=5, base_seed=77,
            )
            out.append(MetricTable(rows=[row]).to_csv())
        assert out[0] == out[1]

    def test_workers_match_serial(self):
        spec = tiny_spec(n=20, total_t=16, delta=8)
        kw = dict(n_reps=4, alpha=0.1, t_train=12, k_permutations=5, base_seed=7)
        row_serial, rec_s = run_experiment(spec, workers=1, **kw)
        row_par, rec_p = run_experiment(spec, workers=2, **kw)
        assert [r.alarm_time for r in rec_s] == [r.alarm_time for r in rec_p]
        assert MetricTable(rows=[row_serial]).to_csv() == MetricTable(rows=[row_par]).to_csv()

    def test_rejects_bad_args(self):
        with pytest.raises(ValueError):
            run_experiment(tiny_spec(), n_reps=0, alpha=0.05)
        with pytest.raises(ValueError):
            run_experiment(tiny_spec(), n_reps=1, alpha=0.05, profile_source="bogus")


class TestDefaults:
    def test_paper_scale_defaults(self):
        from netcp.evaluation import DEFAULT_T_TRAIN
        from netcp.calibration import DEFAULT_PERMUTATIONS

        assert DEFAULT_T_TRAIN == 200
        assert DEFAULT_PERMUTATIONS == 100
        spec = scenario1_spec()
        assert (spec.n, spec.delta, spec.total_t, spec.pi) == (100, 150, 300, 0.9)


class TestMetricTable:
    def test_csv_header_contract(self):
        row = aggregate([record(12, 10, 20)], "sbm", 0.9, 0.05)
        csv = MetricTable(rows=[row]).to_csv()
        lines = csv.strip().split("\n")
        assert lines[0] == "scenario,pi,alpha,n_runs,mean_delay,delay_stderr,pfa,censored"
        assert lines[1].startswith("sbm,0.9,0.05,1,")

    def test_json_round_trip_fields(self):
        import json

        row = aggregate([record(12, 10, 20)], "sbm", 0.9, 0.05)
        data = json.loads(MetricTable(rows=[row]).to_json())
        assert data[0]["scenario"] == "sbm"
        assert data[0]["n_runs"] == 1
