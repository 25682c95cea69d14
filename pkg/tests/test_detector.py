import math

import numpy as np
import pytest

from netcp.completion import MaskedSnapshot
from netcp.detector import (
    DetectorState,
    candidate_grid,
    run_offline,
    threshold_eps,
    threshold_shape,
)
from netcp.profiles import CalibrationProfile
from conftest import make_window


def profile(**kw):
    base = dict(n=20, rho=0.5, p=0.8, m=0.95, r=3, alpha=0.05, c_eps=1.0)
    base.update(kw)
    return CalibrationProfile(**base)


class TestCandidateGrid:
    def test_t2(self):
        assert candidate_grid(2) == [1]

    def test_t10_enumerated_by_hand(self):
        # j=0..3 give 9, 8, 6, 2; j>=4 clamps to 1
        assert candidate_grid(10) == [1, 2, 6, 8, 9]

    def test_size_bound_and_soundness(self):
        rng = np.random.default_rng(1)
        ts = [2, 3, 4, 5, 17, 100, 1023, 1024, 1025]
        ts += [int(v) for v in rng.integers(2, 10**6, size=300)]
        for t in ts:
            grid = candidate_grid(t)
            assert len(grid) <= math.ceil(math.log2(t)) + 1
            assert all(1 <= s < t for s in grid)
            assert grid == sorted(set(grid))

    def test_full_mode(self):
        assert candidate_grid(5, "full") == [1, 2, 3, 4]

    def test_rejects_small_t(self):
        with pytest.raises(ValueError):
            candidate_grid(1)


class TestThreshold:
    def test_reference_value(self):
        # hand-derived: sqrt(150) * (sqrt(ln(2000)/100) + sqrt(ln(4000)/100))
        p = profile(n=100, rho=0.5, p=1.0, m=1.0, r=3, alpha=0.05, c_eps=1.0)
        assert threshold_eps(100, 200, p) == pytest.approx(6.9037797934, abs=1e-9)

    def test_ceps_scaling(self):
        p1 = profile()
        p2 = profile(c_eps=2.0)
        assert threshold_eps(3, 9, p2) == pytest.approx(
            threshold_eps(3, 9, p1) * math.sqrt(2.0), rel=1e-12
        )

    def test_shape_is_ceps_free_factor(self):
        p = profile(c_eps=0.37)
        assert threshold_eps(4, 11, p) == pytest.approx(
            math.sqrt(0.37) * threshold_shape(4, 11, p), rel=1e-12
        )

    @pytest.mark.parametrize("alpha", [0.01, 0.05, 0.1])
    def test_decreases_when_both_sides_grow(self, alpha):
        p = profile(alpha=alpha)
        rng = np.random.default_rng(7)
        for _ in range(200):
            s = int(rng.integers(1, 500))
            gap = int(rng.integers(1, 500))
            ds, dgap = int(rng.integers(1, 50)), int(rng.integers(1, 50))
            t1 = s + gap
            t2 = s + ds + gap + dgap
            assert threshold_eps(s + ds, t2, p) < threshold_eps(s, t1, p)

    def test_requires_valid_split(self):
        with pytest.raises(ValueError):
            threshold_eps(5, 5, profile())

    def test_requires_fitted_ceps(self):
        p = profile(c_eps=None)
        with pytest.raises(ValueError):
            threshold_eps(1, 2, p)


class TestDetectorState:
    def test_first_step_evaluates_nothing(self, rng):
        window, _ = make_window(rng, n=10, length=1)
        state = DetectorState(profile(n=10))
        outcome = state.step(window[0])
        assert outcome.alarm is None
        assert outcome.evaluated_pairs == []

    def test_rejects_non_contiguous(self, rng):
        window, _ = make_window(rng, n=10, length=3)
        state = DetectorState(profile(n=10))
        state.step(window[0])
        with pytest.raises(ValueError):
            state.step(window[2])

    def test_rejects_steps_after_alarm(self, rng):
        window, _ = make_window(rng, n=10, length=4)
        state = DetectorState(profile(n=10, c_eps=1e-9))  # alarms immediately
        state.step(window[0])
        outcome = state.step(window[1])
        assert outcome.alarm is not None
        assert state.status == "alarmed"
        with pytest.raises(RuntimeError):
            state.step(window[2])

    def test_alarm_reports_smallest_crossing_split(self, rng):
        window, _ = make_window(rng, n=10, length=6)
        state = DetectorState(profile(n=10, c_eps=1e-12))
        state.step(window[0])
        for snap in window[1:]:
            outcome = state.step(snap)
            if outcome.alarm:
                crossers = [s for s, stat, eps in outcome.evaluated_pairs if stat >= eps]
                assert outcome.alarm.s == min(crossers)
                break
        else:
            pytest.fail("tiny threshold scale must alarm")

    def test_alarm_iff_pair_crosses(self, rng):
        window, _ = make_window(rng, n=12, length=8)
        state = DetectorState(profile(n=12, c_eps=50.0))
        for snap in window:
            outcome = state.step(snap)
            crossed = any(stat >= eps for _, stat, eps in outcome.evaluated_pairs)
            assert (outcome.alarm is not None) == crossed

    def test_mismatched_size_rejected(self, rng):
        w6, _ = make_window(rng, n=6, length=1)
        w8, _ = make_window(rng, n=8, length=1, start_t=2)
        state = DetectorState(profile(n=6))
        state.step(w6[0])
        with pytest.raises(ValueError):
            state.step(w8[0])


class TestRunOffline:
    def test_no_alarm_with_huge_threshold(self, rng):
        window, _ = make_window(rng, n=10, length=12)
        result = run_offline(window, profile(n=10, c_eps=1e9))
        assert result.alarm_time is None
        assert result.alarm is None
        assert len(result.trace) == 11  # one row per t >= 2

    def test_replay_deterministic(self, rng):
        window, _ = make_window(rng, n=10, length=10)
        p = profile(n=10, c_eps=5.0)
        r1 = run_offline(window, p)
        r2 = run_offline(window, p)
        assert [(r.t, r.s, r.statistic, r.threshold) for r in r1.trace] == [
            (r.t, r.s, r.statistic, r.threshold) for r in r2.trace
        ]

    def test_alarm_minimality(self, rng):
        # before the alarm time, no evaluated pair may cross its threshold
        window, _ = make_window(rng, n=12, length=15, missing=0.2)
        p = profile(n=12, c_eps=0.05)
        result = run_offline(window, p)
        assert result.alarm_time is not None
        for outcome in result.audit[:-1]:
            assert all(stat < eps for _, stat, eps in outcome.evaluated_pairs)
        last = result.audit[-1]
        assert any(stat >= eps for _, stat, eps in last.evaluated_pairs)

    def test_equals_folding_step(self, rng):
        window, _ = make_window(rng, n=10, length=9)
        p = profile(n=10, c_eps=2.0)
        result = run_offline(window, p)
        state = DetectorState(p)
        manual = [state.step(s) for s in window]
        for got, want in zip(result.audit, manual):
            assert got.evaluated_pairs == want.evaluated_pairs

    def test_full_grid_supersets_dyadic_pairs(self, rng):
        window, _ = make_window(rng, n=10, length=12)
        dy = run_offline(window, profile(n=10, c_eps=1e9, grid_mode="dyadic"))
        fu = run_offline(window, profile(n=10, c_eps=1e9, grid_mode="full"))
        for out_d, out_f in zip(dy.audit, fu.audit):
            s_d = {s for s, _, _ in out_d.evaluated_pairs}
            s_f = {s for s, _, _ in out_f.evaluated_pairs}
            assert s_d <= s_f

    def test_statistic_is_symmetric_difference_norm(self):
        a = np.random.default_rng(0).standard_normal((5, 5))
        b = np.random.default_rng(1).standard_normal((5, 5))
        assert np.linalg.norm(a - b) == pytest.approx(np.linalg.norm(b - a))

    def test_rejects_empty_or_misaligned(self, rng):
        p = profile(n=10)
        with pytest.raises(ValueError):
            run_offline([], p)
        window, _ = make_window(rng, n=10, length=2, start_t=5)
        with pytest.raises(ValueError):
            run_offline(window, p)


class TestEngineEquivalence:
    """The fast spectral engine must agree with the exact engine."""

    def test_statistics_close_and_decisions_equal(self):
        from netcp.simulation import SbmSpec, ScenarioSpec, generate_stream
        from netcp.calibration import estimate_profile

        train = generate_stream(
            ScenarioSpec(kind=SbmSpec(), n=100, total_t=40, pi=0.9, seed=5, delta=None)
        ).snapshots
        base = estimate_profile(train, alpha=0.05)

        spec = ScenarioSpec(
            kind=SbmSpec(), n=100, total_t=40, pi=0.9, seed=77, delta=20
        )
        snaps = generate_stream(spec).snapshots

        audit_p = base.replace(c_eps=1e9)
        fast = run_offline(snaps, audit_p)
        exact = run_offline(snaps, audit_p, exact_solver=True, dtype=np.float64)
        for t, (of, oe) in enumerate(zip(fast.audit, exact.audit), start=1):
            for (s1, st1, _), (s2, st2, _) in zip(
                of.evaluated_pairs, oe.evaluated_pairs
            ):
                assert s1 == s2
                shape = threshold_shape(s1, t, audit_p)
                assert abs(st1 - st2) <= 0.05 * shape

        live = base.replace(c_eps=0.03)
        a_fast = run_offline(snaps, live)
        a_exact = run_offline(snaps, live, exact_solver=True, dtype=np.float64)
        assert (a_fast.alarm_time is None) == (a_exact.alarm_time is None)
        if a_fast.alarm_time is not None:
            # near-threshold crossings may shift by a few steps: both engines
            # stop inside the same tolerance band of the iteration's exit rule
            assert abs(a_fast.alarm_time - a_exact.alarm_time) <= 3
