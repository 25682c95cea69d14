"""Online change-point detection over streams of masked network snapshots.

At each time ``t >= 2`` the detector compares the completion estimate of
the full history before a candidate split ``s`` against the estimate of
the window after it, over a dyadic grid of candidate splits, and raises
an alarm the first time the Frobenius distance crosses its threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .completion import MaskedSnapshot, lambda_for_window
from .profiles import CalibrationProfile
from .spectral import BatchedSoftImpute, SolveParams, TrackState

__all__ = [
    "candidate_grid",
    "threshold_shape",
    "threshold_eps",
    "AlarmInfo",
    "DetectionOutcome",
    "DetectorState",
    "OfflineResult",
    "run_offline",
]


def candidate_grid(t: int, mode: str = "dyadic") -> list[int]:
    """Candidate split points for time ``t``, ascending.

    Dyadic mode returns the deduplicated values ``max(t - 2^j, 1)`` for
    ``j = 0, 1, 2, ...``; full mode returns every ``s`` in ``1..t-1``.
    """
    if t < 2:
        raise ValueError(f"need t >= 2, got {t}")
    if mode == "full":
        return list(range(1, t))
    if mode != "dyadic":
        raise ValueError(f"unknown grid mode {mode!r}")
    out = set()
    step = 1
    while True:
        s = t - step
        if s <= 1:
            out.add(1)
            break
        out.add(s)
        step *= 2
    return sorted(out)


def threshold_shape(s: int, t: int, profile: CalibrationProfile) -> float:
    """Threshold without its fitted scale: eps_{s,t} / sqrt(c_eps)."""
    if not 1 <= s < t:
        raise ValueError(f"need 1 <= s < t, got s={s}, t={t}")
    if profile.p <= 0:
        raise ValueError("profile has p = 0; thresholds are undefined")
    base = math.sqrt(profile.r * profile.rho * profile.n * profile.m / profile.p**2)
    al = profile.alpha
    return base * (
        math.sqrt(math.log(s / al) / s) + math.sqrt(math.log(t / al) / (t - s))
    )


def threshold_eps(s: int, t: int, profile: CalibrationProfile) -> float:
    """Alarm threshold for the split (s, t)."""
    return math.sqrt(profile.require_ceps()) * threshold_shape(s, t, profile)


@dataclass
class AlarmInfo:
    t: int
    s: int
    statistic: float
    threshold: float


@dataclass
class DetectionOutcome:
    """Result of one detector step: optional alarm plus the audited pairs."""

    alarm: AlarmInfo | None
    evaluated_pairs: list[tuple[int, float, float]]  # (s, statistic, threshold)


@dataclass
class TraceRow:
    """Per-step summary: the pair with the largest statistic/threshold ratio."""

    t: int
    s: int
    statistic: float
    threshold: float


@dataclass
class OfflineResult:
    alarm_time: int | None
    alarm: AlarmInfo | None
    trace: list[TraceRow]
    audit: list[DetectionOutcome] = field(default_factory=list)


class DetectorState:
    """Monitoring state machine: history, cached estimates, alarm status.

    Steps must arrive with contiguous time indices starting at 1; once an
    alarm fires further steps are rejected. Completion estimates of the
    history prefix are cached per split point; suffix estimates are
    warm-started from the previous step's estimate of the same sliding
    window family.
    """

    def __init__(
        self,
        profile: CalibrationProfile,
        max_iters: int = 500,
        exact_solver: bool = False,
        dtype=np.float32,
    ):
        profile.require_ceps()
        self.profile = profile
        self.t = 0
        self.alarm: AlarmInfo | None = None
        self._n: int | None = None
        self._cum_y: list[np.ndarray] = []
        self._cum_om: list[np.ndarray] = []
        self._params = SolveParams(
            a=profile.a, max_iters=max_iters, exact=exact_solver, dtype=dtype
        )
        self._engine: BatchedSoftImpute | None = None
        self._prefix: dict[int, np.ndarray] = {}
        self._prefix_track = TrackState()
        self._suffix_tracks: dict[object, TrackState] = {}

    @property
    def status(self) -> str:
        return "monitoring" if self.alarm is None else "alarmed"

    # -- window statistics ----------------------------------------------

    def _append(self, snap: MaskedSnapshot):
        dt = self._params.dtype
        if self._n is None:
            self._n = snap.n
            self._engine = BatchedSoftImpute(snap.n, self._params)
            zero = np.zeros((snap.n, snap.n), dtype=dt)
            self._cum_y.append(zero)
            self._cum_om.append(zero)
        elif snap.n != self._n:
            raise ValueError(f"snapshot side {snap.n} differs from stream side {self._n}")
        self._cum_y.append(self._cum_y[-1] + snap.y.astype(dt))
        self._cum_om.append(self._cum_om[-1] + snap.omega.astype(dt))

    def _window(self, s: int, t: int):
        length = t - s
        mean_y = (self._cum_y[t] - self._cum_y[s]) / length
        cbar = 1.0 - (self._cum_om[t] - self._cum_om[s]) / length
        return mean_y[None], cbar[None], length

    def _solve(self, s: int, t: int, track: TrackState) -> np.ndarray:
        mean_y, cbar, length = self._window(s, t)
        lam = lambda_for_window(length, self.profile)
        if length == 1:
            # single-snapshot windows get a canonical cold solve, so their
            # estimates do not depend on the path that reached them
            track = TrackState()
        return self._engine.solve(mean_y, cbar, lam, track)[0]

    def _prefix_estimate(self, s: int) -> np.ndarray:
        est = self._prefix.get(s)
        if est is None:
            est = self._solve(0, s, self._prefix_track)
            self._prefix[s] = est
        return est

    def _suffix_track(self, s: int, t: int) -> TrackState:
        length = t - s
        if self.profile.grid_mode == "full":
            key = s
        elif length & (length - 1) == 0:  # power of two: sliding family
            key = length.bit_length() - 1
        else:
            key = "clamp"  # clamped s=1 window, grows by one each step
        return self._suffix_tracks.setdefault(key, TrackState())

    # -- the online step --------------------------------------------------

    def step(self, snapshot: MaskedSnapshot) -> DetectionOutcome:
        """Consume the next snapshot and evaluate the candidate splits."""
        if self.alarm is not None:
            raise RuntimeError(f"detector already alarmed at t={self.alarm.t}")
        if snapshot.t != self.t + 1:
            raise ValueError(
                f"non-contiguous time index: expected {self.t + 1}, got {snapshot.t}"
            )
        self._append(snapshot)
        self.t = snapshot.t
        t = self.t
        if t < 2:
            return DetectionOutcome(alarm=None, evaluated_pairs=[])

        self._prefix_estimate(t - 1)  # newest prefix; older ones are already cached

        pairs = []
        for s in candidate_grid(t, self.profile.grid_mode):
            prefix = self._prefix_estimate(s)
            suffix = self._solve(s, t, self._suffix_track(s, t))
            stat = float(np.linalg.norm(prefix - suffix))
            eps = threshold_eps(s, t, self.profile)
            pairs.append((s, stat, eps))

        alarm = None
        for s, stat, eps in pairs:  # ascending s; report the smallest crosser
            if stat >= eps:
                alarm = AlarmInfo(t=t, s=s, statistic=stat, threshold=eps)
                break
        if alarm is not None:
            self.alarm = alarm
        return DetectionOutcome(alarm=alarm, evaluated_pairs=pairs)


def run_offline(
    sequence,
    profile: CalibrationProfile,
    max_iters: int = 500,
    exact_solver: bool = False,
    dtype=np.float32,
) -> OfflineResult:
    """Replay a full stream through the detector, stopping at the alarm.

    Equivalent to folding :meth:`DetectorState.step` over the sequence.
    The trace holds, per time step, the pair with the largest ratio of
    statistic to threshold (smallest split on ties).
    """
    if len(sequence) == 0:
        raise ValueError("sequence must be non-empty")
    if sequence[0].t != 1:
        raise ValueError(f"sequence must start at t=1, got t={sequence[0].t}")
    state = DetectorState(
        profile, max_iters=max_iters, exact_solver=exact_solver, dtype=dtype
    )
    trace: list[TraceRow] = []
    audit: list[DetectionOutcome] = []
    alarm = None
    for snap in sequence:
        outcome = state.step(snap)
        audit.append(outcome)
        if outcome.evaluated_pairs:
            s, stat, eps = max(
                outcome.evaluated_pairs, key=lambda p: (p[1] / p[2], -p[0])
            )
            trace.append(TraceRow(t=snap.t, s=s, statistic=stat, threshold=eps))
        if outcome.alarm is not None:
            alarm = outcome.alarm
            break
    return OfflineResult(
        alarm_time=None if alarm is None else alarm.t,
        alarm=alarm,
        trace=trace,
        audit=audit,
    )
