import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from polymoe import expfam
from polymoe.expfam import DomainError, ExpFamilySpec, parse_family

from conftest import FAMILIES


def test_poisson_eval_at_zero():
    ev = expfam.family_eval(parse_family("poisson"), 0.0)
    assert [float(v) for v in ev[:6]] == [0.0, -1.0, 1.0, -1.0, 0.0, -1.0]


def test_bernoulli_eval_at_zero():
    ev = expfam.family_eval(parse_family("bernoulli"), 0.0)
    np.testing.assert_allclose([float(v) for v in ev[:6]], [0, -math.log(2), 1, -0.5, 0, -0.25], atol=1e-15)


def test_gaussian_eval_at_two():
    ev = expfam.family_eval(parse_family("gaussian:sigma2=1.0"), 2.0)
    assert [float(v) for v in ev[:6]] == [2.0, -2.0, 1.0, -2.0, 0.0, -1.0]


def test_non_finite_h_rejected():
    with pytest.raises(DomainError):
        expfam.family_eval(parse_family("poisson"), np.nan)


@pytest.mark.parametrize("fam,h,expected", [("poisson", 0.0, 1.0), ("bernoulli", 0.0, 0.5), ("poisson", 1.0, math.e)])
def test_mean_examples(fam, h, expected):
    assert expfam.mean(parse_family(fam), h) == pytest.approx(expected, rel=1e-14)


def test_mean_matches_numeric_derivative_of_b():
    fam = parse_family("poisson")
    eps = 1e-6
    db = (expfam.family_eval(fam, 1 + eps).b - expfam.family_eval(fam, 1 - eps).b) / (2 * eps)
    assert -float(db) == pytest.approx(math.e, rel=1e-8)


@pytest.mark.parametrize("fam,h,expected", [("poisson", 0.0, 1.0), ("bernoulli", 0.0, 0.25), ("gaussian:sigma2=4", 3.7, 4.0)])
def test_variance_examples(fam, h, expected):
    assert expfam.variance(parse_family(fam), h) == pytest.approx(expected, rel=1e-14)


def test_log_density_examples():
    assert expfam.log_density(parse_family("poisson"), 0, 0.0) == pytest.approx(-1.0, abs=1e-15)
    assert expfam.log_density(parse_family("bernoulli"), 1, 0.0) == pytest.approx(-math.log(2), abs=1e-15)
    y = np.arange(61)
    total = np.exp(expfam.log_density(parse_family("poisson"), y, 0.5)).sum()
    assert abs(total - 1) < 1e-12


def test_log_density_outside_support():
    with pytest.raises(DomainError):
        expfam.log_density(parse_family("poisson"), -1, 0.0)
    with pytest.raises(DomainError):
        expfam.log_density(parse_family("bernoulli"), 2, 0.0)
    with pytest.raises(DomainError):
        expfam.log_density(parse_family("poisson"), 1.5, 0.0)


def test_sampler_moments():
    rng = np.random.default_rng(0)
    y = expfam.sample_y(parse_family("poisson"), np.zeros(10**6), rng)
    assert abs(y.mean() - 1) < 0.005
    yb = expfam.sample_y(parse_family("bernoulli"), np.zeros(1000), rng)
    assert set(np.unique(yb)) <= {0.0, 1.0}
    yg = expfam.sample_y(parse_family("gaussian:sigma2=1"), np.full(10**6, 0.7), rng)
    assert abs(yg.var() - 1) < 0.01


@pytest.mark.parametrize("name", FAMILIES)
def test_derivatives_match_finite_differences(name):
    fam = parse_family(name)
    lo, hi = fam.domain
    if fam.name == "exponential":
        hs = np.linspace(-5, -0.2, 25)
    else:
        hs = np.linspace(max(lo, -5), min(hi, 5), 25)
    ev = expfam.family_eval(fam, hs)
    step = 1e-5 * np.maximum(1, np.abs(hs))
    up, dn = expfam.family_eval(fam, hs + step), expfam.family_eval(fam, hs - step)
    for f, d in (("a", "da"), ("b", "db"), ("da", "dda"), ("db", "ddb")):
        num = (getattr(up, f) - getattr(dn, f)) / (2 * step)
        np.testing.assert_allclose(num, getattr(ev, d), rtol=1e-6, atol=1e-9)


@pytest.mark.parametrize("name", FAMILIES)
def test_safe_domain_invariants(name):
    fam = parse_family(name)
    lo, hi = fam.domain
    hs = np.linspace(max(lo, -30), min(hi, 30), 101)
    ev = expfam.family_eval(fam, hs)
    assert np.all(np.abs(ev.da) > 0)
    assert np.all(ev.dda >= 0)
    assert np.all(np.isfinite(np.stack(ev[:6])))


def test_mean_and_variance_match_scipy():
    hs = np.linspace(-2, 2, 9)
    p = 1 / (1 + np.exp(-hs))
    np.testing.assert_allclose(expfam.mean(parse_family("poisson"), hs), stats.poisson(np.exp(hs)).mean())
    np.testing.assert_allclose(expfam.variance(parse_family("poisson"), hs), stats.poisson(np.exp(hs)).var())
    np.testing.assert_allclose(expfam.mean(parse_family("binomial:n=7"), hs), stats.binom(7, p).mean())
    np.testing.assert_allclose(expfam.variance(parse_family("binomial:n=7"), hs), stats.binom(7, p).var())
    he = -np.linspace(0.3, 4, 9)
    np.testing.assert_allclose(expfam.mean(parse_family("exponential"), he), stats.expon(scale=-1 / he).mean())
    np.testing.assert_allclose(expfam.variance(parse_family("exponential"), he), stats.expon(scale=-1 / he).var())


@pytest.mark.parametrize("name", ["poisson", "bernoulli", "binomial:n=12"])
@settings(max_examples=30, deadline=None)
@given(h=st.floats(-4, 3))
def test_discrete_normalisation(name, h):
    fam = parse_family(name)
    y = expfam.support_grid(fam, h)
    assert abs(np.exp(expfam.log_density(fam, y, h)).sum() - 1) < 1e-10


def test_log_c_matches_scipy_logpmf():
    y = np.arange(20)
    np.testing.assert_allclose(expfam.log_density(parse_family("poisson"), y, 0.3), stats.poisson.logpmf(y, np.exp(0.3)))
    y = np.arange(9)
    np.testing.assert_allclose(
        expfam.log_density(parse_family("binomial:n=8"), y, -0.4), stats.binom.logpmf(y, 8, 1 / (1 + np.exp(0.4)))
    )
    x = np.linspace(-3, 3, 7)
    np.testing.assert_allclose(expfam.log_density(parse_family("gaussian:sigma2=2"), x, 0.5), stats.norm.logpdf(x, 0.5, math.sqrt(2)))


def test_clipping_counts():
    fam = parse_family("poisson")
    hc, mask = expfam.clip(fam, np.array([-40.0, 0.0, 50.0]))
    assert hc.tolist() == [-30.0, 0.0, 30.0]
    assert mask.tolist() == [True, False, True]


@pytest.mark.parametrize("text,expected", [
    ("poisson", ExpFamilySpec("poisson")),
    ("gaussian:sigma2=2.5", ExpFamilySpec("gaussian", sigma2=2.5)),
    ("binomial:n=10", ExpFamilySpec("binomial", trials=10)),
])
def test_parse_family(text, expected):
    assert parse_family(text) == expected
    assert parse_family(str(expected)) == expected


@pytest.mark.parametrize("bad", ["weibull", "binomial", "binomial:n=2.5", "poisson:x=1", "gaussian:sigma2=-1"])
def test_parse_family_rejects(bad):
    with pytest.raises(ValueError):
        parse_family(bad)


def test_natural_from_mean_inverts_mean():
    for name, mus in (("poisson", [0.5, 3.0]), ("bernoulli", [0.2, 0.9]), ("exponential", [0.5, 4.0]), ("gaussian", [-1.0, 2.0])):
        fam = parse_family(name)
        h = expfam.natural_from_mean(fam, np.array(mus))
        np.testing.assert_allclose(expfam.mean(fam, h), mus, rtol=1e-12)
