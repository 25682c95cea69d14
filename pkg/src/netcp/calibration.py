"""Profile estimation from change-free training data and threshold fitting.

Two stages: :func:`estimate_profile` recovers the model parameters
(entrywise sparsity, observation-probability range, rank) from a
completion of the full training window, and :func:`fit_ceps` fixes the
threshold scale by replaying the detector statistic over random time
permutations of the training data, capping the crossing proportion at
the target false-alarm level.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .completion import (
    MaskedSnapshot,
    SolverConfig,
    lambda_for_window,
    soft_impute_window,
)
from .detector import candidate_grid, threshold_shape
from .profiles import CalibrationError, CalibrationProfile
from .spectral import BatchedSoftImpute, SolveParams, TrackState

__all__ = [
    "PermutationReport",
    "estimate_profile",
    "fit_ceps",
    "calibrate",
    "quantile_lower",
    "CEPS_FLOOR",
    "DEFAULT_PERMUTATIONS",
]

#: number of training-data permutations used for the threshold fit
DEFAULT_PERMUTATIONS = 100

#: lower bound on the fitted threshold scale for degenerate training data
CEPS_FLOOR = 1e-6

_ESTIMATE_FLOOR = 1e-6


@dataclass
class PermutationReport:
    """Outcome of the threshold fit over k permutations."""

    k: int
    per_perm_required_ceps: list[float]
    chosen_ceps: float
    crossing_rate_at_chosen: float


def quantile_lower(values, q: float) -> float:
    """Lower (type-1) empirical quantile: the ceil(q*N)-th order statistic."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise ValueError("quantile of empty data")
    idx = max(int(math.ceil(q * v.size)), 1) - 1
    return float(v[min(idx, v.size - 1)])


def _full_window_estimate(training, profile_like, max_iters):
    lam = lambda_for_window(len(training), profile_like)
    config = SolverConfig(lam=lam, a=profile_like.a, max_iters=max_iters)
    return soft_impute_window(training, config)


def estimate_profile(
    training: list[MaskedSnapshot],
    alpha: float,
    grid_mode: str = "dyadic",
    max_iters: int = 500,
) -> CalibrationProfile:
    """Estimate (rho, p, m, r) from a change-free training prefix.

    The penalty needed to complete the training window itself depends on
    the unknown sparsity and observation levels, so the estimate runs in
    two passes: a bootstrap completion with rho = m = 1 fixes provisional
    estimates, and one refinement pass with those estimates produces the
    reported profile. The caller is responsible for the training data
    containing no change point.
    """
    if len(training) < 2:
        raise CalibrationError(f"need at least 2 training snapshots, got {len(training)}")
    n = training[0].n

    mean_omega = np.sum([s.omega for s in sorted(training, key=lambda s: s.t)], axis=0)
    mean_omega = mean_omega / len(training)
    p_hat = quantile_lower(mean_omega, 0.05)
    m_hat = quantile_lower(mean_omega, 0.95)
    if p_hat <= 0:
        raise CalibrationError(
            "training mask too sparse: 5% quantile of observation frequency is 0 "
            f"(min={mean_omega.min():.4f}, mean={mean_omega.mean():.4f})"
        )
    m_hat = max(m_hat, _ESTIMATE_FLOOR)

    bootstrap = CalibrationProfile(
        n=n, rho=1.0, p=p_hat, m=1.0, r=1, alpha=alpha, grid_mode=grid_mode
    )
    first = _full_window_estimate(training, bootstrap, max_iters)
    rho_1 = quantile_lower(first.m_hat, 0.95)

    refined_inputs = bootstrap.replace(rho=max(rho_1, _ESTIMATE_FLOOR), m=m_hat)
    second = _full_window_estimate(training, refined_inputs, max_iters)
    rho_hat = quantile_lower(second.m_hat, 0.95)
    if rho_hat <= 0:
        warnings.warn("sparsity estimate hit the floor; training data look empty")
        rho_hat = _ESTIMATE_FLOOR
    r_hat = max(second.numerical_rank, 1)

    return CalibrationProfile(
        n=n,
        rho=min(rho_hat, 1.0),
        p=p_hat,
        m=m_hat,
        r=r_hat,
        alpha=alpha,
        grid_mode=grid_mode,
    )


# -- permutation sweep -------------------------------------------------------


def _stack_training(training):
    snaps = sorted(training, key=lambda s: s.t)
    y = np.stack([s.y for s in snaps]).astype(np.float32)
    om = np.stack([s.omega for s in snaps]).astype(np.float32)
    return y, om


def _solo_estimates(y_all, om_all, profile, params):
    """Single-snapshot estimates with a canonical zero start, batched."""
    n = y_all.shape[1]
    engine = BatchedSoftImpute(n, params)
    lam = lambda_for_window(1, profile)
    out = np.empty_like(y_all)
    chunk = 64
    for lo in range(0, y_all.shape[0], chunk):
        hi = min(lo + chunk, y_all.shape[0])
        track = TrackState()  # fresh: zero warm start, exact decomposition
        out[lo:hi] = engine.solve(y_all[lo:hi], 1.0 - om_all[lo:hi], lam, track)
    return out


def _sweep_chunk(y_all, om_all, orders, profile, params, solo):
    """Max of (statistic / threshold shape)^2 over the grid, per permutation.

    ``orders`` maps each permutation in the chunk to original snapshot
    indices; the replayed sequence is the training data in that order,
    reindexed to times 1..T.
    """
    n_perm, t_len = orders.shape
    n = y_all.shape[1]
    engine = BatchedSoftImpute(n, params)

    cum_y = np.zeros((n_perm, t_len + 1, n, n), dtype=np.float32)
    cum_om = np.zeros_like(cum_y)
    for k in range(n_perm):
        np.cumsum(y_all[orders[k]], axis=0, out=cum_y[k, 1:])
        np.cumsum(om_all[orders[k]], axis=0, out=cum_om[k, 1:])

    def window(s, t):
        length = t - s
        mean_y = (cum_y[:, t] - cum_y[:, s]) / length
        cbar = 1.0 - (cum_om[:, t] - cum_om[:, s]) / length
        return mean_y, cbar, length

    prefix_store = np.empty((t_len, n_perm, n, n), dtype=np.float32)
    prefix_store[1] = solo[orders[:, 0]]
    prefix_track = TrackState()
    prefix_track.m_warm = prefix_store[1].copy()
    for s in range(2, t_len):
        mean_y, cbar, length = window(0, s)
        lam = lambda_for_window(length, profile)
        prefix_store[s] = engine.solve(mean_y, cbar, lam, prefix_track)

    tracks: dict[object, TrackState] = {}
    best = np.zeros(n_perm, dtype=np.float64)
    for t in range(2, t_len + 1):
        for s in candidate_grid(t, profile.grid_mode):
            length = t - s
            if length == 1:
                suffix = solo[orders[:, t - 1]]
            else:
                if profile.grid_mode == "full":
                    key = s
                elif length & (length - 1) == 0:
                    key = length.bit_length() - 1
                else:
                    key = "clamp"
                track = tracks.setdefault(key, TrackState())
                mean_y, cbar, _ = window(s, t)
                lam = lambda_for_window(length, profile)
                suffix = engine.solve(mean_y, cbar, lam, track)
            diff = prefix_store[s] - suffix
            stat = np.sqrt(np.einsum("bij,bij->b", diff, diff, dtype=np.float64))
            shape = threshold_shape(s, t, profile)
            np.maximum(best, (stat / shape) ** 2, out=best)
    return best


def _chunk_job(args):
    return _sweep_chunk(*args)


def fit_ceps(
    training: list[MaskedSnapshot],
    profile: CalibrationProfile,
    k: int = DEFAULT_PERMUTATIONS,
    rng_seed: int = 0,
    chunk_size: int = 25,
    workers: int = 1,
    exact_solver: bool = False,
    max_iters: int = 500,
) -> PermutationReport:
    """Fit the threshold scale so permuted training data rarely alarm.

    Each permutation k is replayed through the detection statistic over
    the same grid the deployed detector uses; ``required(k)`` is the
    smallest threshold scale at which that replay would not alarm
    (statistic ties with the threshold count as alarms). The chosen scale
    is the ceil((1-alpha)k)-th order statistic of the required values,
    which caps the crossing proportion at alpha by construction.
    """
    if k < 1:
        raise ValueError(f"need at least one permutation, got {k}")
    if len(training) < 2:
        raise CalibrationError("need at least 2 training snapshots")
    t_len = len(training)

    y_all, om_all = _stack_training(training)
    params = SolveParams(a=profile.a, max_iters=max_iters, exact=exact_solver)
    solo = _solo_estimates(y_all, om_all, profile, params)

    orders = np.stack(
        [
            np.random.Generator(
                np.random.Philox(np.random.SeedSequence([rng_seed, i]))
            ).permutation(t_len)
            for i in range(k)
        ]
    )

    chunks = [orders[lo : lo + chunk_size] for lo in range(0, k, chunk_size)]
    jobs = [(y_all, om_all, ch, profile, params, solo) for ch in chunks]
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk_job, jobs))
    else:
        parts = [_sweep_chunk(*job) for job in jobs]
    best = np.concatenate(parts)

    required = np.nextafter(best, np.inf)  # smallest scale that does NOT alarm
    order_stats = np.sort(required)
    idx = max(int(math.ceil((1.0 - profile.alpha) * k)), 1) - 1
    chosen = float(order_stats[idx])
    if chosen < CEPS_FLOOR:
        warnings.warn(
            f"degenerate training statistics; flooring threshold scale at {CEPS_FLOOR}"
        )
        chosen = CEPS_FLOOR
    crossing = float(np.mean(required > chosen))
    return PermutationReport(
        k=k,
        per_perm_required_ceps=[float(v) for v in required],
        chosen_ceps=chosen,
        crossing_rate_at_chosen=crossing,
    )


def calibrate(
    training: list[MaskedSnapshot],
    alpha: float,
    k: int = DEFAULT_PERMUTATIONS,
    rng_seed: int = 0,
    grid_mode: str = "dyadic",
    **fit_kwargs,
) -> tuple[CalibrationProfile, PermutationReport]:
    """Estimate the profile and fit its threshold scale in one call."""
    profile = estimate_profile(training, alpha, grid_mode=grid_mode)
    report = fit_ceps(training, profile, k=k, rng_seed=rng_seed, **fit_kwargs)
    return profile.replace(c_eps=report.chosen_ceps), report
