"""Multi-copy soft-impute solver for windows of partially observed networks.

The solver minimises a nuclear-norm penalised least-squares fit over a
window of snapshots: each iterate fills the unobserved entries of every
snapshot with the current estimate, averages, and applies singular-value
soft-thresholding. Entrywise truncation at level ``a`` is applied to the
working matrix after every iterate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .kernels import RANK_TOL, fro_norm, sup_norm, symmetrize

__all__ = [
    "MaskedSnapshot",
    "SolverConfig",
    "GraphonEstimate",
    "SolverNumericalError",
    "soft_impute_window",
    "lambda_for_window",
    "window_stats",
]


class SolverNumericalError(RuntimeError):
    """Non-finite values appeared mid-iteration."""


@dataclass
class MaskedSnapshot:
    """One time step: observed adjacency ``y`` and its observation mask ``omega``.

    ``y`` holds zeros at unobserved entries; both arrays are symmetric with
    the same side length.
    """

    t: int
    y: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        self.omega = np.asarray(self.omega, dtype=bool)
        if self.t < 1:
            raise ValueError(f"time index must be positive, got {self.t}")
        if self.y.ndim != 2 or self.y.shape[0] != self.y.shape[1]:
            raise ValueError(f"y must be square, got shape {self.y.shape}")
        if self.y.shape != self.omega.shape:
            raise ValueError(
                f"y/omega shape mismatch: {self.y.shape} vs {self.omega.shape}"
            )
        if not np.array_equal(self.y, self.y.T) or not np.array_equal(
            self.omega, self.omega.T
        ):
            raise ValueError("y and omega must be symmetric")
        if self.y.min(initial=0.0) < 0.0 or self.y.max(initial=0.0) > 1.0:
            raise ValueError("y entries must lie in [0, 1]")
        if np.any(self.y[~self.omega]):
            raise ValueError("y must be zero wherever omega is false")

    @property
    def n(self) -> int:
        return self.y.shape[0]


@dataclass
class SolverConfig:
    """Inputs of one solver run: penalty, truncation level, stopping knobs."""

    lam: float
    a: float = 1.0
    max_iters: int = 500
    fro_tol: float | None = None  # default 1e-7 * n, resolved at solve time
    init: np.ndarray | None = None

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError(f"penalty must be positive, got {self.lam}")
        if not 0 < self.a <= 1:
            raise ValueError(f"truncation level must be in (0, 1], got {self.a}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.fro_tol is not None and self.fro_tol < 0:
            raise ValueError(f"fro_tol must be nonnegative, got {self.fro_tol}")


@dataclass
class GraphonEstimate:
    """Completed symmetric matrix with its shrunken spectrum and exit record."""

    m_hat: np.ndarray
    singular_values: np.ndarray
    numerical_rank: int
    iters_used: int
    converged_by: str  # op_norm_criterion | fro_fallback | iter_cap
    iterate_diffs: list[float] = field(default_factory=list)


def lambda_for_window(window_len: int, profile) -> float:
    """Penalty level for a window of ``window_len`` snapshots.

    Scales as ``c_lambda * L^{-1/2} * (m * sqrt(n * rho) + sqrt(log(4/alpha)))``.
    """
    if window_len < 1:
        raise ValueError(f"window length must be >= 1, got {window_len}")
    if not 0 < profile.alpha < 1:
        raise ValueError(f"alpha must be in (0, 1), got {profile.alpha}")
    return (
        profile.c_lambda
        * window_len ** -0.5
        * (profile.m * math.sqrt(profile.n * profile.rho) + math.sqrt(math.log(4.0 / profile.alpha)))
    )


def window_stats(window: Sequence[MaskedSnapshot]):
    """Reduce a window to (mean observed matrix, mean unobserved fraction, length).

    Since each ``y`` is already zero off its mask, the per-iterate average
    of ``y`` filled with the working matrix on the unobserved entries is
    ``mean_y + m_tilde * cbar`` with ``cbar = 1 - mean(omega)``. Snapshots
    are reduced in time order so the result does not depend on the order
    they were passed in.
    """
    if len(window) == 0:
        raise ValueError("window must be non-empty")
    snaps = sorted(window, key=lambda s: s.t)
    n = snaps[0].n
    for s in snaps:
        if s.n != n:
            raise ValueError(f"snapshot at t={s.t} has side {s.n}, expected {n}")
    mean_y = np.sum([s.y for s in snaps], axis=0) / len(snaps)
    mean_omega = np.sum([s.omega for s in snaps], axis=0) / len(snaps)
    return mean_y, 1.0 - mean_omega, len(snaps)


def _truncate(m: np.ndarray, a: float) -> np.ndarray:
    return np.clip(m, -a, a)


def solve_window_stats(mean_y, cbar, config: SolverConfig) -> GraphonEstimate:
    """Run the solver loop on pre-reduced window statistics."""
    n = mean_y.shape[0]
    lam = config.lam
    fro_tol = config.fro_tol if config.fro_tol is not None else 1e-7 * n
    m_tilde = (
        np.zeros((n, n))
        if config.init is None
        else np.array(config.init, dtype=np.float64, copy=True)
    )
    if m_tilde.shape != (n, n):
        raise ValueError(f"init has shape {m_tilde.shape}, expected {(n, n)}")

    op_threshold = lam / 3.0
    m_hat_prev = None
    diffs: list[float] = []
    converged_by = "iter_cap"
    vals = None
    k = 0
    for k in range(1, config.max_iters + 1):
        work = mean_y + m_tilde * cbar
        vals, vecs = np.linalg.eigh(work)
        shrunk = np.sign(vals) * np.maximum(np.abs(vals) - lam, 0.0)
        m_hat = symmetrize((vecs * shrunk) @ vecs.T)
        if not np.isfinite(m_hat).all():
            raise SolverNumericalError(f"non-finite iterate at iteration {k}")

        # stopping rule, checked against the current working matrix before
        # it is replaced by the truncated iterate
        step = m_hat - m_tilde
        masked_step = step * cbar
        masked_fro = fro_norm(masked_step)
        if masked_fro < op_threshold:
            op_ok = True  # operator norm is bounded by the Frobenius norm
        else:
            op_ok = float(np.abs(np.linalg.eigvalsh(masked_step)).max()) < op_threshold
        crit_ok = op_ok and sup_norm(step) < config.a

        if m_hat_prev is not None:
            diffs.append(fro_norm(m_hat - m_hat_prev))
        m_hat_prev = m_hat
        m_tilde = _truncate(m_hat, config.a)

        if crit_ok:
            converged_by = "op_norm_criterion"
            break
        if diffs and diffs[-1] < fro_tol:
            converged_by = "fro_fallback"
            break

    spectrum = np.sort(np.maximum(np.abs(vals) - lam, 0.0))[::-1]
    return GraphonEstimate(
        m_hat=m_tilde,
        singular_values=spectrum,
        numerical_rank=int((spectrum > RANK_TOL).sum()),
        iters_used=k,
        converged_by=converged_by,
        iterate_diffs=diffs,
    )


def soft_impute_window(
    window: Sequence[MaskedSnapshot], config: SolverConfig
) -> GraphonEstimate:
    """Estimate the common graphon of a window of masked snapshots.

    Iterates ``m_hat = S_lam(mean_t[y(t) on omega(t) + m_tilde off omega(t)])``
    until the averaged masked step has operator norm below ``lam / 3`` and
    the entrywise step is below ``a``; a Frobenius fallback on consecutive
    iterates and the iteration cap act as secondary exits, recorded in
    ``converged_by``. The returned matrix carries the entrywise truncation
    at ``a``.
    """
    mean_y, cbar, _ = window_stats(window)
    return solve_window_stats(mean_y, cbar, config)
