"""Repetition harness: detection delay and false-alarm proportion.

Each repetition draws a fresh change-free training stream, calibrates on
it, draws a test stream from the scenario, replays the detector, and
classifies the outcome. A run whose alarm precedes the true change is a
false alarm; a run with no alarm by the end of the stream is censored
and contributes the maximal delay, following the convention that the
effective estimate is capped at the stream length.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .calibration import DEFAULT_PERMUTATIONS, calibrate
from .detector import run_offline
from .profiles import CalibrationError, CalibrationProfile
from .simulation import ScenarioSpec, generate_stream
from .streamio import scenario_from_dict, scenario_to_dict

__all__ = [
    "RunRecord",
    "MetricRow",
    "MetricTable",
    "run_experiment",
    "classify_run",
    "DEFAULT_T_TRAIN",
]

#: training-stream length used by the calibration step of every repetition
DEFAULT_T_TRAIN = 200

CSV_HEADER = "scenario,pi,alpha,n_runs,mean_delay,delay_stderr,pfa,censored"


@dataclass
class RunRecord:
    seed: int
    spec_hash: str
    alarm_time: int | None
    delta: int | None
    delay: float | None
    false_alarm: bool
    censored: bool
    invalid: bool = False
    failure: str | None = None


@dataclass
class MetricRow:
    scenario: str
    pi: float
    alpha: float
    n_runs: int
    mean_delay: float
    delay_stderr: float
    pfa: float
    censored: int
    invalid: int = 0

    def csv_line(self) -> str:
        return (
            f"{self.scenario},{self.pi!r},{self.alpha!r},{self.n_runs},"
            f"{self.mean_delay!r},{self.delay_stderr!r},{self.pfa!r},{self.censored}"
        )


@dataclass
class MetricTable:
    rows: list[MetricRow]

    def to_csv(self) -> str:
        return "\n".join([CSV_HEADER] + [r.csv_line() for r in self.rows]) + "\n"

    def to_json(self) -> str:
        return json.dumps([dataclasses.asdict(r) for r in self.rows], indent=2)


def spec_hash(spec: ScenarioSpec) -> str:
    payload = json.dumps(scenario_to_dict(spec), sort_keys=True)
    return hashlib.sha1(payload.encode()).hexdigest()[:12]


def classify_run(alarm_time: int | None, delta: int | None, total_t: int):
    """Return (delay, false_alarm, censored) for one finished run.

    The effective alarm time is capped at the stream length; runs with a
    change point get a defined delay whenever the capped alarm does not
    precede the change.
    """
    censored = alarm_time is None
    effective = total_t if censored else min(alarm_time, total_t)
    if delta is None:
        return None, not censored, censored
    if effective < delta:
        return None, True, False
    return float(effective - delta), False, censored


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _one_rep(args) -> RunRecord:
    (
        spec_dict,
        rep,
        base_seed,
        alpha,
        t_train,
        k_perm,
        profile_json,
        max_iters,
        exact_solver,
    ) = args
    spec = scenario_from_dict(spec_dict)
    train_seed = derive_seed(base_seed, rep, 1)
    test_seed = derive_seed(base_seed, rep, 2)
    perm_seed = derive_seed(base_seed, rep, 3)
    record = RunRecord(
        seed=test_seed,
        spec_hash=spec_hash(spec),
        alarm_time=None,
        delta=spec.delta,
        delay=None,
        false_alarm=False,
        censored=False,
    )
    try:
        if profile_json is None:
            train_spec = dataclasses.replace(
                spec, delta=None, total_t=t_train, seed=train_seed
            )
            training = generate_stream(train_spec).snapshots
            profile, _ = calibrate(
                training, alpha, k=k_perm, rng_seed=perm_seed,
                max_iters=max_iters, exact_solver=exact_solver,
            )
        else:
            profile = CalibrationProfile.from_json(profile_json)
        test = generate_stream(dataclasses.replace(spec, seed=test_seed))
        result = run_offline(
            test.snapshots, profile, max_iters=max_iters, exact_solver=exact_solver
        )
        record.alarm_time = result.alarm_time
        record.delay, record.false_alarm, record.censored = classify_run(
            result.alarm_time, spec.delta, spec.total_t
        )
    except CalibrationError as exc:
        record.invalid = True
        record.failure = str(exc)
    return record


def aggregate(records: list[RunRecord], scenario: str, pi: float, alpha: float) -> MetricRow:
    valid = [r for r in records if not r.invalid]
    delays = sorted(r.delay for r in valid if r.delay is not None)
    if delays:
        mean_delay = float(np.mean(delays))
        stderr = (
            float(np.std(delays, ddof=1) / math.sqrt(len(delays)))
            if len(delays) > 1
            else 0.0
        )
    else:
        mean_delay = math.nan
        stderr = math.nan
    pfa = float(np.mean([r.false_alarm for r in valid])) if valid else math.nan
    return MetricRow(
        scenario=scenario,
        pi=pi,
        alpha=alpha,
        n_runs=len(valid),
        mean_delay=mean_delay,
        delay_stderr=stderr,
        pfa=pfa,
        censored=sum(r.censored for r in valid),
        invalid=len(records) - len(valid),
    )


def run_experiment(
    spec: ScenarioSpec,
    n_reps: int,
    alpha: float,
    base_seed: int = 0,
    profile_source: str = "calibrate-per-run",
    shared_profile: CalibrationProfile | None = None,
    t_train: int = DEFAULT_T_TRAIN,
    k_permutations: int = DEFAULT_PERMUTATIONS,
    workers: int = 1,
    scenario_label: str | None = None,
    max_iters: int = 500,
    exact_solver: bool = False,
) -> tuple[MetricRow, list[RunRecord]]:
    """Run ``n_reps`` calibrate-and-detect repetitions of one scenario.

    ``profile_source`` selects whether every repetition calibrates on its
    own fresh training stream (the default) or all repetitions share one
    profile: a provided ``shared_profile``, or one calibrated on the
    training stream of repetition 0.
    """
    if n_reps < 1:
        raise ValueError(f"n_reps must be >= 1, got {n_reps}")
    if profile_source not in ("calibrate-per-run", "shared-profile"):
        raise ValueError(f"unknown profile_source {profile_source!r}")

    profile_json = None
    if profile_source == "shared-profile":
        if shared_profile is None:
            train_spec = dataclasses.replace(
                spec, delta=None, total_t=t_train, seed=derive_seed(base_seed, 0, 1)
            )
            training = generate_stream(train_spec).snapshots
            shared_profile, _ = calibrate(
                training, alpha, k=k_permutations,
                rng_seed=derive_seed(base_seed, 0, 3), max_iters=max_iters,
                exact_solver=exact_solver,
            )
        profile_json = shared_profile.to_json()

    spec_dict = scenario_to_dict(spec)
    jobs = [
        (
            spec_dict, rep, base_seed, alpha, t_train, k_permutations,
            profile_json, max_iters, exact_solver,
        )
        for rep in range(n_reps)
    ]
    if workers > 1 and n_reps > 1:
        os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
        os.environ.setdefault("OMP_NUM_THREADS", "1")
        import multiprocessing as mp

        # fork keeps workers independent of how __main__ was launched and
        # inherits deterministic state; fall back to spawn where unavailable
        method = "fork" if "fork" in mp.get_all_start_methods() else "spawn"
        ctx = mp.get_context(method)
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            records = list(pool.map(_one_rep, jobs))
    else:
        records = [_one_rep(job) for job in jobs]

    label = scenario_label or type(spec.kind).__name__.removesuffix("Spec").lower()
    row = aggregate(records, label, spec.pi, alpha)
    return row, records
