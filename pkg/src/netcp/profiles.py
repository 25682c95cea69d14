"""Calibration profile: estimated model parameters plus tuning constants.

The profile carries everything the penalty and threshold formulas need:
network size ``n``, entrywise sparsity ``rho``, observation-probability
range ``[p, m]``, rank ``r``, the false-alarm level ``alpha``, and the
constants ``c_lambda`` (penalty scale), ``c_eps`` (threshold scale,
fitted by permutation), and ``a`` (entrywise truncation).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

__all__ = ["CalibrationProfile", "CalibrationError"]


class CalibrationError(RuntimeError):
    """Calibration could not produce a usable profile."""


@dataclass
class CalibrationProfile:
    n: int
    rho: float
    p: float
    m: float
    r: int
    alpha: float
    c_lambda: float = 2.0 / 3.0
    c_eps: float | None = None
    a: float = 1.0
    grid_mode: str = "dyadic"

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"n must be >= 2, got {self.n}")
        if not 0 < self.p <= self.m <= 1:
            raise ValueError(f"need 0 < p <= m <= 1, got p={self.p}, m={self.m}")
        if not 0 < self.rho <= 1:
            raise ValueError(f"rho must be in (0, 1], got {self.rho}")
        if self.r < 1:
            raise ValueError(f"rank must be >= 1, got {self.r}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.c_eps is not None and self.c_eps <= 0:
            raise ValueError(f"c_eps must be positive, got {self.c_eps}")
        if not 0 < self.a <= 1:
            raise ValueError(f"truncation level must be in (0, 1], got {self.a}")
        if self.grid_mode not in ("dyadic", "full"):
            raise ValueError(f"grid_mode must be 'dyadic' or 'full', got {self.grid_mode!r}")

    def require_ceps(self) -> float:
        if self.c_eps is None:
            raise ValueError("profile has no fitted c_eps; run the threshold fit first")
        return self.c_eps

    def replace(self, **kw) -> "CalibrationProfile":
        return dataclasses.replace(self, **kw)

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(dataclasses.asdict(self), indent=indent, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CalibrationProfile":
        data = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown profile fields: {sorted(extra)}")
        return cls(**data)
