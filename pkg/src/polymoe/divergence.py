"""Divergences between a target conditional density and a fitted mixture.

Covariates are drawn from (or integrated against) the uniform law on
[-1, 1]^s, which cancels from every log-ratio.  For discrete families with a
manageable support the inner expectation over y is an exact truncated sum
(tail mass below 1e-12); otherwise y is sampled as well.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import logsumexp

from . import expfam
from ._rng import make_rng
from .errors import DataError
from .moe import MoEParams, expert_natural
from .targets import TargetSpec

RATIO_LIMIT = 1e12
M_INF_INFLATION = 1.05
GL_NODES_PER_PANEL = 5
_CHUNK_ELEMS = 2_000_000


@dataclass
class DivergenceEstimate:
    value: float
    std_error: float
    n_mc: int
    method: str  # monte_carlo | quadrature | truncated_sum
    squared: float | None = None  # Hellinger only: d_h^2 and its standard error
    squared_std_error: float | None = None
    clamped: bool = False

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def _check_pair(target: TargetSpec, model: MoEParams):
    if target.family != model.family:
        raise DataError(f"target family {target.family} differs from model family {model.family}")
    if target.s != model.s:
        raise DataError(f"target has s={target.s} but model has s={model.s}")


def _model_log_kernel(model: MoEParams, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """log f(y|x) - c(y) for a grid: X (n, s), Y (n_y,) -> (n, n_y)."""
    _, ev, lg = expert_natural(model, X)
    terms = lg[:, None, :] + Y[None, :, None] * ev.a[:, None, :] + ev.b[:, None, :]
    return logsumexp(terms, axis=2)


def _target_log_kernel(target: TargetSpec, hp: np.ndarray, Y: np.ndarray) -> np.ndarray:
    ev = expfam.family_eval(target.family, hp)
    return Y[None, :] * ev.a[:, None] + ev.b[:, None]


def _per_x_sums(target: TargetSpec, model: MoEParams, X: np.ndarray, ygrid: np.ndarray, fn) -> np.ndarray:
    """Apply fn(log p_kernel, log f_kernel, log c) over the y grid in memory-bounded chunks."""
    lc = expfam.log_c(target.family, ygrid)
    hp = target(X)
    chunk = max(1, _CHUNK_ELEMS // (len(ygrid) * model.m))
    out = np.empty(X.shape[0])
    for lo in range(0, X.shape[0], chunk):
        sl = slice(lo, lo + chunk)
        lp = _target_log_kernel(target, hp[sl], ygrid)
        lf = _model_log_kernel(model, X[sl], ygrid)
        out[sl] = fn(lp, lf, lc)
    return out


def _inner_grid(target: TargetSpec, X: np.ndarray, method: str):
    if method not in ("auto", "truncated_sum", "monte_carlo"):
        raise ValueError(f"unknown method {method!r}")
    if method == "monte_carlo" or not target.family.discrete:
        if method == "truncated_sum":
            raise ValueError(f"truncated summation is unavailable for {target.family}")
        return None
    grid = expfam.support_grid(target.family, float(np.max(target(X))))
    if grid is None and method == "truncated_sum":
        raise ValueError("support too large for truncated summation")
    return grid


def _mean_se(v: np.ndarray) -> tuple[float, float]:
    se = float(np.std(v, ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
    return float(np.mean(v)), se


def kl_mc(target: TargetSpec, model: MoEParams, n_mc: int, seed: int, method: str = "auto") -> DivergenceEstimate:
    """KL(target || model), averaged over x ~ uniform; p_x cancels."""
    _check_pair(target, model)
    if n_mc < 100:
        raise ValueError("n_mc must be at least 100")
    rng = make_rng(seed, "kl")
    X = target.sample_x(rng, n_mc)
    grid = _inner_grid(target, X, method)
    if grid is not None:

        def per_x(lp, lf, lc):
            logp = lp + lc
            return np.sum(np.exp(logp) * (lp - lf), axis=1)

        val, se = _mean_se(_per_x_sums(target, model, X, grid, per_x))
        return DivergenceEstimate(val, se, n_mc, "truncated_sum")
    hp = target(X)
    Y = np.atleast_1d(expfam.sample_y(target.family, hp, rng))
    d = log_ratio(target, model, X, Y)
    val, se = _mean_se(d)
    return DivergenceEstimate(val, se, n_mc, "monte_carlo")


def log_ratio(target: TargetSpec, model: MoEParams, X, Y) -> np.ndarray:
    """log p(y|x) - log f(y|x) pointwise; c(y) cancels and is never formed."""
    X = np.asarray(X, dtype=float).reshape(-1, target.s)
    Y = np.asarray(Y, dtype=float).reshape(-1)
    lp = expfam.log_kernel(target.family, Y, target(X))
    _, ev, lg = expert_natural(model, X)
    lf = logsumexp(lg + Y[:, None] * ev.a + ev.b, axis=1)
    return lp - lf


def hellinger_mc(
    target: TargetSpec, model: MoEParams, n_mc: int, seed: int, method: str = "auto"
) -> DivergenceEstimate:
    """Hellinger distance d_h with d_h^2 = (1/2) int (sqrt p - sqrt f)^2 = 1 - E_p sqrt(f/p)."""
    _check_pair(target, model)
    if n_mc < 100:
        raise ValueError("n_mc must be at least 100")
    rng = make_rng(seed, "hellinger")
    X = target.sample_x(rng, n_mc)
    grid = _inner_grid(target, X, method)
    if grid is not None:

        def per_x(lp, lf, lc):
            # (1/2) sum (sqrt p - sqrt f)^2 avoids the cancellation in 1 - sum sqrt(p f)
            return 0.5 * np.sum((np.exp(0.5 * (lp + lc)) - np.exp(0.5 * (lf + lc))) ** 2, axis=1)

        d2, se = _mean_se(_per_x_sums(target, model, X, grid, per_x))
        used = "truncated_sum"
    else:
        Y = np.atleast_1d(expfam.sample_y(target.family, target(X), rng))
        r = np.exp(-0.5 * log_ratio(target, model, X, Y))
        aff, se = _mean_se(r)
        d2 = 1.0 - aff
        used = "monte_carlo"
    clamped = d2 < 0
    d2 = max(d2, 0.0)
    d = math.sqrt(d2)
    se_d = se / (2 * d) if d > 0 else math.sqrt(se)
    return DivergenceEstimate(d, se_d, n_mc, used, squared=d2, squared_std_error=se, clamped=clamped)


def _gl_grid(s: int, panels: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes on [-1,1]^s with weights summing to 1 (uniform law)."""
    t, w = leggauss(GL_NODES_PER_PANEL)
    edges = np.linspace(-1.0, 1.0, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    x1 = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    w1 = (half[:, None] * w[None, :]).ravel() / 2.0
    axes = np.meshgrid(*[x1] * s, indexing="ij")
    wts = np.meshgrid(*[w1] * s, indexing="ij")
    X = np.stack([a.ravel() for a in axes], axis=1)
    W = np.prod(np.stack([a.ravel() for a in wts], axis=1), axis=1)
    return X, W


def _upper_integrand(target: TargetSpec, model: MoEParams, X: np.ndarray) -> np.ndarray:
    H, _, lg = expert_natural(model, X)
    return np.sum(np.exp(lg) * (H - target(X)[:, None]) ** 2, axis=1)


def upper_divergence(
    target: TargetSpec,
    model: MoEParams,
    n_quad: int = 64,
    method: str = "auto",
    n_mc: int = 100_000,
    seed: int = 0,
) -> DivergenceEstimate:
    """int sum_j g_j(x) (h_k(x; theta_j) - h(x))^2 dP_x.

    Composite Gauss-Legendre with ``n_quad`` panels per axis for s <= 2,
    Monte Carlo over the covariate law otherwise.
    """
    _check_pair(target, model)
    if method == "auto":
        method = "quadrature" if target.s <= 2 else "monte_carlo"
    if method == "quadrature":
        if target.s > 2:
            raise ValueError("tensor quadrature is limited to s <= 2")
        X, W = _gl_grid(target.s, n_quad)
        return DivergenceEstimate(float(W @ _upper_integrand(target, model, X)), 0.0, 0, "quadrature")
    if method != "monte_carlo":
        raise ValueError(f"unknown method {method!r}")
    X = target.sample_x(make_rng(seed, "upper"), n_mc)
    val, se = _mean_se(_upper_integrand(target, model, X))
    return DivergenceEstimate(val, se, n_mc, "monte_carlo")


def _x_grid(s: int, n_grid: int) -> np.ndarray:
    if s <= 2:
        axes = np.meshgrid(*[np.linspace(-1.0, 1.0, n_grid)] * s, indexing="ij")
        return np.stack([a.ravel() for a in axes], axis=1)
    rng = make_rng(0, "x-grid", s)
    corners = np.array(np.meshgrid(*[[-1.0, 1.0]] * s, indexing="ij")).reshape(s, -1).T
    return np.vstack([rng.uniform(-1, 1, size=(max(10_000, n_grid), s)), corners])


def m_infty(target: TargetSpec, n_grid: int = 201) -> float:
    """(1/2) max_x [ |phi(h)| |a''(h)| + |b''(h)| ] over a covariate grid."""
    if target.s <= 2 and n_grid < 100:
        raise ValueError("n_grid must be at least 100 per axis")
    hp = target(_x_grid(target.s, n_grid))
    ev = expfam.family_eval(target.family, hp)
    phi = -ev.db / ev.da
    return float(0.5 * np.max(np.abs(phi) * np.abs(ev.dda) + np.abs(ev.ddb)))


def _y_grid_continuous(target: TargetSpec, hp: np.ndarray, n: int = 401) -> np.ndarray:
    fam = target.family
    if fam.name == "gaussian":
        sd = math.sqrt(fam.sigma2)
        return np.linspace(hp.min() - 8 * sd, hp.max() + 8 * sd, n)
    rate = -np.clip(hp, *fam.domain)
    return np.linspace(0.0, -math.log(1e-12) / rate.min(), n)


def log_ratio_max(target: TargetSpec, model: MoEParams, n_grid: int = 101) -> float:
    """max over an (x, y) grid of log(p/f); exp of this estimates c_s^2."""
    X = _x_grid(target.s, n_grid)
    hp = target(X)
    if target.family.discrete:
        ygrid = expfam.support_grid(target.family, float(hp.max()))
        if ygrid is None:
            ygrid = np.arange(MAX_Y_GRID, dtype=float)
    else:
        ygrid = _y_grid_continuous(target, hp)
    best = -np.inf
    chunk = max(1, _CHUNK_ELEMS // (len(ygrid) * model.m))
    for lo in range(0, X.shape[0], chunk):
        sl = slice(lo, lo + chunk)
        d = _target_log_kernel(target, hp[sl], ygrid) - _model_log_kernel(model, X[sl], ygrid)
        best = max(best, float(d.max()))
    return best


MAX_Y_GRID = 10_000


@dataclass
class SandwichReport:
    kl: float
    kl_se: float
    dh2: float
    dh2_se: float
    m_inf: float
    D: float
    cs2: float
    taylor_ok: bool | None
    hellinger_ok: bool | None
    hellinger_unnormalized_ok: bool | None
    diagnostic: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def sandwich_report(
    target: TargetSpec,
    model: MoEParams,
    n_mc: int = 20_000,
    seed: int = 0,
    *,
    n_grid: int = 101,
    n_quad: int = 64,
    n_se: float = 3.0,
) -> SandwichReport:
    """Numerical check of the two KL sandwiches.

    * KL <= M_inf * D, with the grid estimate of M_inf inflated by 5%;
    * d_h^2 <= KL <= 2 (1 + log c_s) d_h^2, where c_s^2 bounds p/f and d_h is
      the Hellinger distance with the 1/2 normalisation.

    Each inequality is allowed ``n_se`` combined standard errors of slack.
    ``hellinger_unnormalized_ok`` repeats the second check with the
    unnormalised squared Hellinger distance int (sqrt p - sqrt f)^2 = 2 d_h^2.
    """
    kl = kl_mc(target, model, n_mc, seed)
    hel = hellinger_mc(target, model, n_mc, seed)
    minf = m_infty(target, max(n_grid, 100))
    D = upper_divergence(target, model, n_quad=n_quad, seed=seed)
    dh2, dh2_se = hel.squared, hel.squared_std_error
    lr = log_ratio_max(target, model, n_grid)
    cs2 = math.exp(min(lr, 700.0))

    slack31 = n_se * math.hypot(kl.std_error, M_INF_INFLATION * minf * D.std_error)
    ok31 = kl.value <= M_INF_INFLATION * minf * D.value + slack31
    if lr > math.log(RATIO_LIMIT):
        return SandwichReport(
            kl.value, kl.std_error, dh2, dh2_se, minf, D.value, cs2, ok31, None, None,
            diagnostic=f"density ratio grid max {cs2:.3g} exceeds {RATIO_LIMIT:.0e}; Hellinger sandwich skipped",
        )

    def sandwich(h2, h2_se):
        coef = 2.0 * (1.0 + 0.5 * math.log(max(cs2, 1.0)))
        lower = h2 <= kl.value + n_se * math.hypot(kl.std_error, h2_se)
        upper = kl.value <= coef * h2 + n_se * math.hypot(kl.std_error, coef * h2_se)
        return bool(lower and upper)

    return SandwichReport(
        kl.value, kl.std_error, dh2, dh2_se, minf, D.value, cs2,
        bool(ok31), sandwich(dh2, dh2_se), sandwich(2.0 * dh2, 2.0 * dh2_se),
    )
