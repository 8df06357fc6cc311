import numpy as np
import pytest

from partlat.denoise import DenoiseState, SyncCoefficients
from partlat.parts import IdentityTable, ObjectLatents, PartLatent
from partlat.semantics import GlobalTokens, LocalTokens


def toy_state(n_parts=2, d=4, t3d=3, t2d=5, k_m=4, n_real=2, seed=0, t=0, zero_identity=False):
    """Small random clean state for denoising tests."""
    rng = np.random.default_rng(seed)
    table = IdentityTable.zeros(d) if zero_identity else IdentityTable(d, seed=0)
    parts = [
        PartLatent(i, rng.normal(size=(t3d, d)), rng.normal(size=(t2d, d)), table.row(i))
        for i in range(n_parts)
    ]
    vec = np.zeros((k_m, d))
    mask = np.zeros(k_m, dtype=bool)
    vec[:n_real] = rng.normal(size=(n_real, d))
    mask[:n_real] = True
    local = LocalTokens(vec, [f"phrase{i}" for i in range(n_real)], mask)
    return DenoiseState(ObjectLatents(parts), local, GlobalTokens(), t)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
