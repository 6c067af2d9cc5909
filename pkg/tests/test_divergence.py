import math

import numpy as np
import pytest

from polymoe import divergence as dv
from polymoe.errors import DataError
from polymoe.expfam import parse_family
from polymoe.gating import GateParams
from polymoe.moe import MoEParams
from polymoe.polybasis import PolyBasis
from polymoe.targets import make_target

from conftest import constant_model, random_model


def const_target(family, h, s=1):
    return make_target("polynomial", s=s, family=family, degree=0, coeffs=[float(h)])


def within(est, truth, n_se=3.0, floor=1e-12):
    return abs(est.value - truth) <= n_se * est.std_error + floor


def test_kl_identical_is_zero():
    t = const_target("poisson", 0.3)
    for method in ("truncated_sum", "monte_carlo"):
        est = dv.kl_mc(t, constant_model("poisson", 0.3), 1000, 0, method=method)
        assert within(est, 0.0)


def test_kl_gaussian_closed_form():
    est = dv.kl_mc(const_target("gaussian:sigma2=1", 0.0), constant_model("gaussian:sigma2=1", 1.0), 20000, 1)
    assert est.method == "monte_carlo"
    assert within(est, 0.5)


def test_kl_poisson_closed_form():
    truth = math.log(0.5) - 1 + 2
    t, m = const_target("poisson", 0.0), constant_model("poisson", math.log(2))
    mc = dv.kl_mc(t, m, 20000, 2, method="monte_carlo")
    assert within(mc, truth)
    exact = dv.kl_mc(t, m, 1000, 2)
    assert exact.method == "truncated_sum" and exact.std_error < 1e-15
    assert exact.value == pytest.approx(truth, abs=1e-11)


def test_kl_family_mismatch():
    with pytest.raises(DataError):
        dv.kl_mc(const_target("poisson", 0.0), constant_model("bernoulli", 0.0), 1000, 0)
    with pytest.raises(ValueError):
        dv.kl_mc(const_target("poisson", 0.0), constant_model("poisson", 0.0), 10, 0)


def test_truncated_sum_and_mc_agree(rng):
    t = make_target("smooth_sin", s=1, family="poisson", amplitude=0.8, omega=2.0)
    model = random_model(rng, "poisson", 2, 1)
    a = dv.kl_mc(t, model, 20000, 3, method="truncated_sum")
    b = dv.kl_mc(t, model, 20000, 3, method="monte_carlo")
    assert abs(a.value - b.value) <= 3 * math.hypot(a.std_error, b.std_error)


def test_kl_invariant_to_base_measure_shift(rng):
    t = make_target("smooth_sin", s=1, family="poisson")
    model = random_model(rng, "poisson", 2, 1)
    X = rng.uniform(-1, 1, (50, 1))
    Y = rng.poisson(1.0, 50).astype(float)
    r0 = dv.log_ratio(t, model, X, Y)
    # adding c(y) + const to both log densities: the ratio is computed from kernels only
    lp = t.log_density(X, Y) + 3.0
    from polymoe.moe import cond_log_density
    lf = cond_log_density(model, X, Y) + 3.0
    assert np.max(np.abs((lp - lf) - r0)) < 1e-12


def test_hellinger_examples():
    g0, g1 = const_target("gaussian:sigma2=1", 0.0), constant_model("gaussian:sigma2=1", 1.0)
    est = dv.hellinger_mc(g0, g1, 40000, 4)
    truth = 1 - math.exp(-1 / 8)
    assert abs(est.squared - truth) <= 3 * est.squared_std_error
    same = dv.hellinger_mc(const_target("bernoulli", 0.0), constant_model("bernoulli", 0.0), 500, 0)
    assert same.method == "truncated_sum" and same.squared == pytest.approx(0.0, abs=1e-15)
    ident = dv.hellinger_mc(g0, constant_model("gaussian:sigma2=1", 0.0), 1000, 0)
    assert ident.squared <= 3 * ident.squared_std_error + 1e-15


def test_hellinger_poisson_exact():
    est = dv.hellinger_mc(const_target("poisson", 0.0), constant_model("poisson", math.log(1.2)), 500, 0)
    assert est.squared == pytest.approx(1 - math.exp(-(math.sqrt(1.2) - 1) ** 2 / 2), abs=1e-12)


def test_upper_divergence_examples(rng):
    t = make_target("polynomial", s=1, family="poisson", degree=1, coeffs=[0.0, 1.0])
    zero = constant_model("poisson", 0.0)
    assert dv.upper_divergence(t, zero).value == pytest.approx(1 / 3, abs=1e-12)
    exact = MoEParams(parse_family("poisson"), PolyBasis(1, 1), GateParams(2, 1, rng.standard_normal((1, 2))),
                      np.array([[0.0, 1.0], [0.0, 1.0]]))
    assert dv.upper_divergence(t, exact).value < 1e-10
    t2 = make_target("smooth_sin", s=2, family="poisson")
    model = random_model(rng, "poisson", 3, 1, s=2)
    q = dv.upper_divergence(t2, model, method="quadrature")
    mc = dv.upper_divergence(t2, model, method="monte_carlo", n_mc=200_000, seed=1)
    assert abs(q.value - mc.value) <= 3 * mc.std_error
    assert q.std_error == 0.0


def test_m_infty_examples():
    assert dv.m_infty(const_target("poisson", 0.0)) == pytest.approx(0.5)
    t = make_target("smooth_sin", s=1, family="bernoulli", amplitude=3.0)
    assert dv.m_infty(t) <= 0.125 + 1e-15
    lin = make_target("polynomial", s=1, family="poisson", degree=1, coeffs=[0.0, 1.0])
    assert dv.m_infty(lin) == pytest.approx(math.e / 2, rel=1e-12)


def test_sandwich_identical_model():
    r = dv.sandwich_report(const_target("poisson", 0.2), constant_model("poisson", 0.2), 2000, 0)
    assert r.kl == pytest.approx(0.0, abs=1e-14) and r.D == 0.0
    assert r.taylor_ok and r.hellinger_ok and r.hellinger_unnormalized_ok


def test_sandwich_poisson_one_vs_one_point_two():
    r = dv.sandwich_report(const_target("poisson", 0.0), constant_model("poisson", math.log(1.2)), 2000, 0)
    kl = 1.2 - 1 - math.log(1.2)
    dh2 = 1 - math.exp(-(math.sqrt(1.2) - 1) ** 2 / 2)
    assert r.kl == pytest.approx(kl, abs=1e-12)
    assert r.dh2 == pytest.approx(dh2, abs=1e-11)
    assert r.cs2 == pytest.approx(math.exp(0.2), rel=1e-12)
    assert r.m_inf == 0.5 and r.D == pytest.approx(math.log(1.2) ** 2, rel=1e-12)
    # the flags reflect the arithmetic: with the 1/2-normalised distance the upper
    # Hellinger bound and the h(x)-only curvature bound both fall short of KL
    assert 2 * (1 + 0.1) * dh2 < kl
    assert r.hellinger_ok is False
    assert r.hellinger_unnormalized_ok is True
    assert (r.taylor_ok is True) == (kl <= 1.05 * 0.5 * math.log(1.2) ** 2)


def test_sandwich_skips_unbounded_ratio():
    r = dv.sandwich_report(const_target("poisson", 2.5), constant_model("poisson", -2.0), 2000, 0)
    assert r.hellinger_ok is None and "skipped" in r.diagnostic


def test_divergence_estimate_serialises():
    d = dv.DivergenceEstimate(0.1, 0.01, 100, "monte_carlo").to_dict()
    assert d == {"value": 0.1, "std_error": 0.01, "n_mc": 100, "method": "monte_carlo", "clamped": False}
