import numpy as np
import pytest

from passive_mdi.channel import ChannelParams
from passive_mdi.expectations import QuadratureSpec
from passive_mdi.regions import RegionParams
from passive_mdi.source import SourceParams


@pytest.fixture
def sp():
    return SourceParams.from_mu_max(0.5)


@pytest.fixture
def rp():
    return RegionParams(delta_z=0.15, delta_x=0.15, delta_phi=0.3, t1=0.6, t2=0.2)


@pytest.fixture
def ch():
    return ChannelParams(p_d=1e-8, e_d=0.01, eta_d=0.7)


@pytest.fixture
def quad():
    return QuadratureSpec(10, 10, 10)


@pytest.fixture
def quad_fast():
    return QuadratureSpec(8, 8, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
