import numpy as np
import pytest

from polymoe.expfam import parse_family
from polymoe.gating import GateParams
from polymoe.moe import MoEParams
from polymoe.polybasis import PolyBasis

FAMILIES = ["poisson", "bernoulli", "gaussian:sigma2=1.0", "exponential", "binomial:n=5"]


def constant_model(family, h, s=1):
    """Single intercept-only expert with natural argument h."""
    fam = parse_family(family) if isinstance(family, str) else family
    return MoEParams(fam, PolyBasis(s, 0), GateParams.uniform(1, s), np.array([[float(h)]]))


def random_model(rng, family, m, k, s=1, scale=0.5):
    fam = parse_family(family) if isinstance(family, str) else family
    basis = PolyBasis(s, k)
    theta = scale * rng.standard_normal((m, basis.J))
    if fam.name == "exponential":
        theta[:, 0] = -1.5 - np.abs(theta[:, 0])
        theta[:, 1:] *= 0.2
    W = rng.standard_normal((m - 1, s + 1))
    return MoEParams(fam, basis, GateParams(m, s, W), theta)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
