"""Dense symmetric-matrix primitives: SVD, singular-value shrinkage, norms, masks.

Everything here operates on plain numpy arrays. Matrices are square,
row-major, float64; masks are boolean arrays of the same shape. All
operations are pure functions and map symmetric inputs to exactly
symmetric outputs.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

__all__ = [
    "SvdFactors",
    "SvdError",
    "svd",
    "svd_soft_threshold",
    "masked_project",
    "fro_norm",
    "op_norm",
    "sup_norm",
    "nuclear_norm",
    "symmetrize",
    "is_symmetric",
    "check_square",
]

#: singular values below this are treated as numerically zero
RANK_TOL = 1e-10


class SvdError(RuntimeError):
    """Raised when the backend SVD fails to converge on a finite matrix."""


class SvdFactors(NamedTuple):
    """Factors W = u @ diag(d) @ v.T with d nonnegative, descending."""

    u: np.ndarray
    d: np.ndarray
    v: np.ndarray

    def compose(self) -> np.ndarray:
        return (self.u * self.d) @ self.v.T


def check_square(a, name="matrix"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square 2-d, got shape {a.shape}")
    return a


def is_symmetric(a) -> bool:
    a = np.asarray(a)
    return a.shape[0] == a.shape[1] and np.array_equal(a, a.T)


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return the exactly symmetric part (a + a.T)/2.

    Addition of a matrix and its transpose is exactly symmetric in IEEE
    arithmetic, so the result satisfies b[i, j] == b[j, i] bitwise.
    """
    return (a + a.T) * 0.5


def _condition_summary(w: np.ndarray) -> str:
    finite = np.isfinite(w)
    return (
        f"shape={w.shape}, finite={int(finite.sum())}/{w.size}, "
        f"max|entry|={np.abs(w[finite]).max() if finite.any() else 'n/a'}, "
        f"fro={np.linalg.norm(np.where(finite, w, 0.0))}"
    )


def svd(w) -> SvdFactors:
    """Full dense SVD of a square matrix.

    Uses the deterministic LAPACK dense solver; the divide-and-conquer
    iteration cap is owned by the backend. Non-convergence is reported as
    :class:`SvdError` with a condition summary of the offending matrix.
    """
    w = check_square(w)
    if not np.isfinite(w).all():
        raise ValueError("svd requires finite entries; " + _condition_summary(w))
    try:
        u, d, vt = np.linalg.svd(w)
    except np.linalg.LinAlgError as exc:
        raise SvdError(f"SVD did not converge: {_condition_summary(w)}") from exc
    return SvdFactors(u=u, d=d, v=vt.T)


def svd_soft_threshold(w, lam: float) -> np.ndarray:
    """Shrink every singular value of ``w`` by ``lam``, clipping at zero.

    Returns U diag((d_i - lam)_+) V^T. Symmetric input takes the
    eigendecomposition route, which preserves symmetry exactly; general
    square input goes through the full SVD.
    """
    if lam < 0:
        raise ValueError(f"shrinkage level must be >= 0, got {lam}")
    w = check_square(w)
    if is_symmetric(w):
        if not np.isfinite(w).all():
            raise ValueError("soft threshold requires finite entries; " + _condition_summary(w))
        try:
            vals, vecs = np.linalg.eigh(w)
        except np.linalg.LinAlgError as exc:
            raise SvdError(f"eigendecomposition did not converge: {_condition_summary(w)}") from exc
        shrunk = np.sign(vals) * np.maximum(np.abs(vals) - lam, 0.0)
        return symmetrize((vecs * shrunk) @ vecs.T)
    u, d, v = svd(w)
    return (u * np.maximum(d - lam, 0.0)) @ v.T


def masked_project(a, mask) -> np.ndarray:
    """Entries of ``a`` where ``mask`` is true, zero elsewhere."""
    a = np.asarray(a, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if a.shape != mask.shape:
        raise ValueError(f"shape mismatch: matrix {a.shape} vs mask {mask.shape}")
    return np.where(mask, a, 0.0)


def fro_norm(a) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=np.float64), "fro"))


def op_norm(a) -> float:
    """Largest singular value. Zero matrix (e.g. empty mask support) gives 0."""
    a = check_square(a)
    if not np.any(a):
        return 0.0
    if is_symmetric(a):
        return float(np.abs(np.linalg.eigvalsh(a)).max())
    return float(svd(a).d[0])


def sup_norm(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(np.abs(a).max()) if a.size else 0.0


def nuclear_norm(a) -> float:
    a = check_square(a)
    if is_symmetric(a):
        return float(np.abs(np.linalg.eigvalsh(a)).sum())
    return float(svd(a).d.sum())
