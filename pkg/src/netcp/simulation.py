"""Synthetic dynamic-network streams: block models, dot-product graphs, masks.

Streams are sequences of :class:`~netcp.completion.MaskedSnapshot` with a
known generating graphon before and after an optional change time. All
randomness flows through counter-style generators keyed by
``(seed, time, draw kind)``, so generation is reproducible and could be
parallelised over time without races.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .completion import MaskedSnapshot
from .kernels import fro_norm

__all__ = [
    "SbmSpec",
    "RdpgSpec",
    "ScenarioSpec",
    "StreamTruth",
    "GeneratedStream",
    "DEFAULT_SBM_B_PRE",
    "DEFAULT_SBM_B_POST",
    "PI_GRID",
    "community_labels",
    "sbm_graphon",
    "cosine_graphon",
    "rdpg_graphon",
    "generate_stream",
    "scenario1_spec",
    "scenario2_spec",
]

# default block intensity matrices: communities 2 and 3 swap their strong link
DEFAULT_SBM_B_PRE = np.array(
    [
        [0.6, 1.0, 0.6],
        [1.0, 0.6, 0.5],
        [0.6, 0.5, 0.6],
    ]
)
DEFAULT_SBM_B_POST = np.array(
    [
        [0.6, 0.5, 0.6],
        [0.5, 0.6, 1.0],
        [0.6, 1.0, 0.6],
    ]
)

#: observation-probability settings exercised by the benchmark harness
PI_GRID = (0.7, 0.8, 0.9, 0.95)

_KIND_ADJACENCY = 1
_KIND_MASK = 2
_KIND_LATENT = 3


@dataclass
class SbmSpec:
    """Block model: entry (i, j) of the graphon is rho * B[z_i, z_j]."""

    rho: float = 0.5
    b_pre: np.ndarray = field(default_factory=lambda: DEFAULT_SBM_B_PRE.copy())
    b_post: np.ndarray = field(default_factory=lambda: DEFAULT_SBM_B_POST.copy())
    communities: int = 3

    def __post_init__(self):
        self.b_pre = np.asarray(self.b_pre, dtype=np.float64)
        self.b_post = np.asarray(self.b_post, dtype=np.float64)
        k = self.communities
        for name, b in (("b_pre", self.b_pre), ("b_post", self.b_post)):
            if b.shape != (k, k):
                raise ValueError(f"{name} must be {k}x{k}, got {b.shape}")
            if not np.array_equal(b, b.T):
                raise ValueError(f"{name} must be symmetric")
            if b.min() < 0 or b.max() > 1:
                raise ValueError(f"{name} entries must lie in [0, 1]")
        if not 0 < self.rho <= 1 or self.rho * max(self.b_pre.max(), self.b_post.max()) > 1:
            raise ValueError("rho and B must keep probabilities within [0, 1]")


@dataclass
class RdpgSpec:
    """Dot-product graph: edge probability is the cosine of latent positions."""

    d: int = 5
    change_fraction: float = 0.25

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"latent dimension must be >= 1, got {self.d}")
        if not 0 <= self.change_fraction <= 1:
            raise ValueError(
                f"change_fraction must be in [0, 1], got {self.change_fraction}"
            )


@dataclass
class ScenarioSpec:
    """Full generative description of one stream; ground truth follows from it."""

    kind: SbmSpec | RdpgSpec
    n: int
    total_t: int
    pi: float
    seed: int
    delta: int | None = None  # None means no change point
    self_loops: bool = True

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"need at least 2 nodes, got {self.n}")
        if self.total_t < 1:
            raise ValueError(f"total_t must be >= 1, got {self.total_t}")
        if self.delta is not None and not 1 <= self.delta < self.total_t:
            raise ValueError(
                f"delta must satisfy 1 <= delta < total_t, got {self.delta}"
            )
        if not 0 < self.pi <= 1:
            raise ValueError(f"pi must be in (0, 1], got {self.pi}")


@dataclass
class StreamTruth:
    delta: int | None
    kappa: float
    graphon_pre: np.ndarray
    graphon_post: np.ndarray


@dataclass
class GeneratedStream:
    snapshots: list[MaskedSnapshot]
    truth: StreamTruth


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *key])))


def community_labels(n: int, communities: int) -> np.ndarray:
    """Contiguous blocks, sizes differing by at most one."""
    return np.ceil(communities * np.arange(1, n + 1) / n).astype(int) - 1


def sbm_graphon(spec: ScenarioSpec):
    """Pre- and post-change graphons for a block-model spec."""
    sbm = spec.kind
    if not isinstance(sbm, SbmSpec):
        raise TypeError("sbm_graphon needs an SbmSpec scenario")
    z = community_labels(spec.n, sbm.communities)
    pre = sbm.rho * sbm.b_pre[np.ix_(z, z)]
    post = sbm.rho * sbm.b_post[np.ix_(z, z)]
    return pre, post


def cosine_graphon(x: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity of the rows of ``x``."""
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero-norm latent row")
    g = (x @ x.T) / np.outer(norms, norms)
    return np.clip((g + g.T) * 0.5, 0.0, 1.0)


def rdpg_graphon(spec: ScenarioSpec):
    """Pre- and post-change graphons for a dot-product-graph spec.

    Latent positions are drawn once per stream from the spec seed; the
    post-change matrix replaces the first ``floor(n * change_fraction)``
    latent rows with fresh ones.
    """
    rdpg = spec.kind
    if not isinstance(rdpg, RdpgSpec):
        raise TypeError("rdpg_graphon needs an RdpgSpec scenario")
    rng = _rng(spec.seed, 0, _KIND_LATENT)
    x = rng.random((spec.n, rdpg.d))
    x_new = rng.random((spec.n, rdpg.d))
    # uniform draws are never exactly zero rows, but guard and resample anyway
    for mat in (x, x_new):
        bad = ~np.linalg.norm(mat, axis=1).astype(bool)
        while bad.any():
            mat[bad] = rng.random((int(bad.sum()), rdpg.d))
            bad = ~np.linalg.norm(mat, axis=1).astype(bool)
    n_changed = int(spec.n * rdpg.change_fraction)
    y = x.copy()
    y[:n_changed] = x_new[:n_changed]
    return cosine_graphon(x), cosine_graphon(y)


def scenario_graphons(spec: ScenarioSpec):
    if isinstance(spec.kind, SbmSpec):
        return sbm_graphon(spec)
    return rdpg_graphon(spec)


def _sample_symmetric(rng, prob: np.ndarray, include_diag: bool) -> np.ndarray:
    """Bernoulli upper triangle mirrored down; diagonal only if requested."""
    draws = rng.random(prob.shape) < prob
    upper = np.triu(draws, 0 if include_diag else 1)
    return upper | upper.T


def generate_stream(spec: ScenarioSpec) -> GeneratedStream:
    """Sample a full stream of masked snapshots plus its ground truth."""
    pre, post = scenario_graphons(spec)
    delta = spec.delta
    kappa = 0.0 if delta is None else fro_norm(pre - post)
    snapshots = []
    for t in range(1, spec.total_t + 1):
        graphon = pre if (delta is None or t <= delta) else post
        a_rng = _rng(spec.seed, t, _KIND_ADJACENCY)
        m_rng = _rng(spec.seed, t, _KIND_MASK)
        adj = _sample_symmetric(a_rng, graphon, spec.self_loops).astype(np.float64)
        pi_mat = np.full((spec.n, spec.n), spec.pi)
        omega = _sample_symmetric(m_rng, pi_mat, spec.self_loops)
        y = adj * omega
        snapshots.append(MaskedSnapshot(t=t, y=y, omega=omega))
    return GeneratedStream(
        snapshots=snapshots,
        truth=StreamTruth(
            delta=delta,
            kappa=kappa,
            graphon_pre=pre,
            graphon_post=post if delta is not None else pre.copy(),
        ),
    )


def scenario1_spec(pi=0.9, seed=0, n=100, delta=150, total_t=300) -> ScenarioSpec:
    """Block-model stream with the community-swap change."""
    return ScenarioSpec(
        kind=SbmSpec(), n=n, total_t=total_t, pi=pi, seed=seed, delta=delta,
        self_loops=True,
    )


def scenario2_spec(pi=0.9, seed=0, n=100, delta=150, total_t=300) -> ScenarioSpec:
    """Dot-product-graph stream, no self loops, latent-position change."""
    return ScenarioSpec(
        kind=RdpgSpec(), n=n, total_t=total_t, pi=pi, seed=seed, delta=delta,
        self_loops=False,
    )
