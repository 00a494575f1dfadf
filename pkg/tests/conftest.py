import numpy as np
import pytest

from presistance import structure as st
from presistance import trace as tr


@pytest.fixture(scope="session")
def sg22():
    return st.build_sierpinski_gasket(2, 2)


@pytest.fixture(scope="session")
def sg23():
    return st.build_sierpinski_gasket(2, 3)


@pytest.fixture(scope="session")
def sg22_sigma():
    """Exact-enough self-similar weights for SG(2,2), keyed by p."""
    s = st.build_sierpinski_gasket(2, 2)
    out = {}
    for p in (1.5, 2.0, 3.0):
        E0 = tr.symmetric_seed(s, p)
        out[p] = tr.self_similar_weight(s, E0)["sigma"]
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
