import numpy as np
import pytest

from netcp.completion import MaskedSnapshot


def make_window(rng, n, length, missing=0.3, graphon=None, start_t=1):
    """Seeded window of masked snapshots from a common edge-probability matrix."""
    if graphon is None:
        base = rng.uniform(0.1, 0.6, size=(n, n))
        graphon = (base + base.T) / 2
    snaps = []
    for k in range(length):
        adj = np.triu(rng.random((n, n)) < graphon)
        adj = (adj | adj.T).astype(float)
        om = np.triu(rng.random((n, n)) >= missing)
        om = om | om.T
        snaps.append(MaskedSnapshot(t=start_t + k, y=adj * om, omega=om))
    return snaps, graphon


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
