"""Maximum-likelihood fitting by EM with multi-restart initialization.

Each EM iteration computes responsibilities, then solves the two M-step
problems by damped Newton:

* gate: weighted multinomial logistic regression, sum_ij tau_ij log g_j(x_i; W);
* experts: one weighted GLM per expert, sum_i tau_ij [y_i a(h_ij) + b(h_ij)].

Both use a ridge of ``ridge * I`` on the negated Hessian and accept a step only
if it does not decrease the objective, so the log-likelihood is
non-decreasing across iterations.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from . import expfam
from ._rng import make_rng
from .errors import ConfigError, DataError, NumericalError
from .expfam import ExpFamilySpec, parse_family
from .gating import GateParams, augment, gate_log_weights, gate_param_count
from .moe import Dataset, MoEParams, expert_log_terms
from .polybasis import PolyBasis, dimension, eval_basis

log = logging.getLogger(__name__)

STARVED_MASS = 1e-8
MAX_HALVINGS = 30
TIE_TOL = 1e-12
INIT_LABEL_SMOOTHING = 0.1


@dataclass
class FitConfig:
    family: ExpFamilySpec | str
    m: int = 1
    k: int = 1
    max_em_iters: int = 500
    rel_tol: float = 1e-8
    inner_newton_iters: int = 50
    inner_tol: float = 1e-10
    restarts: int = 5
    ridge: float = 1e-8
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if isinstance(self.family, str):
            self.family = parse_family(self.family)
        if self.m < 1 or self.k < 0:
            raise ConfigError("need m >= 1 and k >= 0")
        if self.max_em_iters < 1 or self.inner_newton_iters < 1 or self.restarts < 1:
            raise ConfigError("iteration and restart counts must be positive")
        if not (0 < self.rel_tol < 1) or self.inner_tol <= 0 or self.ridge < 0:
            raise ConfigError("need 0 < rel_tol < 1, inner_tol > 0 and ridge >= 0")
        if self.threads < 0:
            raise ConfigError("threads must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["family"] = str(self.family)
        return d


@dataclass
class FitReport:
    model: MoEParams
    loglik_trajectory: list[float]
    iterations: int
    converged: bool
    restart_index: int
    clip_events: int = 0
    starved_events: int = 0
    restart_logliks: list[float] = field(default_factory=list)

    @property
    def loglik(self) -> float:
        return self.loglik_trajectory[-1]

    def to_dict(self) -> dict:
        return {
            "loglik": self.loglik,
            "loglik_trajectory": list(self.loglik_trajectory),
            "iterations": self.iterations,
            "converged": self.converged,
            "restart_index": self.restart_index,
            "restart_logliks": list(self.restart_logliks),
            "clip_events": self.clip_events,
            "starved_events": self.starved_events,
        }


def e_step(model: MoEParams, data: Dataset) -> np.ndarray:
    """(n, m) responsibilities; each row sums to one."""
    lj = expert_log_terms(model, data.X, data.Y)
    return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))


def _newton_direction(neg_hess: np.ndarray, grad: np.ndarray, ridge: float) -> np.ndarray:
    A = neg_hess + ridge * np.eye(len(grad))
    try:
        return np.linalg.solve(A, grad)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(A, grad, rcond=None)[0]


def _fit_expert(fam, B, y, w, theta, ridge, max_iter, tol, n):
    """Damped Newton on sum_i w_i [y_i a(h_i) + b(h_i)], h = B theta."""

    def objective(th):
        ev = expfam.family_eval(fam, B @ th)
        return float(np.dot(w, y * ev.a + ev.b)), ev

    f, ev = objective(theta)
    for _ in range(max_iter):
        live = ~ev.clipped
        grad = B.T @ (w * (y * ev.da + ev.db) * live)
        if np.linalg.norm(grad) / n <= tol:
            break
        curv = -w * (y * ev.dda + ev.ddb) * live
        d = _newton_direction(B.T @ (curv[:, None] * B), grad, ridge)
        t = 1.0
        for _ in range(MAX_HALVINGS):
            cand = theta + t * d
            fc, evc = objective(cand)
            if np.isfinite(fc) and fc >= f:
                break
            t *= 0.5
        else:
            break
        if fc == f:
            break
        theta, f, ev = cand, fc, evc
    return theta


def m_step_experts(
    tau: np.ndarray,
    data: Dataset,
    model: MoEParams,
    *,
    ridge: float = 1e-8,
    max_iter: int = 50,
    tol: float = 1e-10,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-expert weighted GLM fits starting from ``model.experts``.

    Returns the new (m, J) coefficient array and a boolean mask of starved
    experts (responsibility mass below 1e-8), whose coefficients are left
    unchanged.
    """
    B = eval_basis(model.basis, model.scale_x(data.X))
    mass = tau.sum(axis=0)
    starved = mass < STARVED_MASS
    theta = np.array(model.experts, dtype=float)
    for j in range(model.m):
        if starved[j]:
            continue
        theta[j] = _fit_expert(model.family, B, data.Y, tau[:, j], theta[j], ridge, max_iter, tol, data.n)
    return theta, starved


def gate_objective(tau: np.ndarray, Xa: np.ndarray, W: np.ndarray) -> float:
    m = tau.shape[1]
    gp = GateParams(m, Xa.shape[1] - 1, W)
    return float(np.sum(tau * gate_log_weights(gp, Xa[:, 1:])))


def m_step_gate(
    tau: np.ndarray,
    data: Dataset,
    gate_init: GateParams,
    *,
    x_scaled: np.ndarray | None = None,
    ridge: float = 1e-8,
    max_iter: int = 50,
    tol: float = 1e-10,
) -> GateParams:
    """Weighted multinomial logistic regression of ``tau`` on (1, x)."""
    m, s = gate_init.m, gate_init.s
    if m == 1:
        return gate_init
    X = data.X if x_scaled is None else x_scaled
    Xa = augment(X)
    r = tau.sum(axis=1)
    W = np.array(gate_init.W, dtype=float)
    q = m - 1
    p = s + 1
    f = gate_objective(tau, Xa, W)
    for _ in range(max_iter):
        g = np.exp(gate_log_weights(GateParams(m, s, W), X))[:, :q]
        grad = ((tau[:, :q] - r[:, None] * g).T @ Xa).ravel()
        if np.linalg.norm(grad) / data.n <= tol:
            break
        C = -g[:, :, None] * g[:, None, :]
        C[:, np.arange(q), np.arange(q)] += g
        C *= r[:, None, None]
        H = np.einsum("njl,na,nb->jalb", C, Xa, Xa, optimize=True)
        d = _newton_direction(H.reshape(q * p, q * p), grad, ridge).reshape(q, p)
        t = 1.0
        for _ in range(MAX_HALVINGS):
            cand = W + t * d
            fc = gate_objective(tau, Xa, cand) if np.all(np.isfinite(cand)) else -np.inf
            if np.isfinite(fc) and fc >= f:
                break
            t *= 0.5
        else:
            break
        if fc == f:
            break
        W, f = cand, fc
    return GateParams(m, s, W)


def _kmeans(X: np.ndarray, m: int, rng: np.random.Generator, iters: int = 25) -> np.ndarray:
    """k-means++ seeding followed by Lloyd iterations; returns labels."""
    n = X.shape[0]
    centers = np.empty((m, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for c in range(1, m):
        tot = d2.sum()
        if tot > 0:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * tot, side="right"))
            idx = min(idx, n - 1)
        else:
            idx = int(rng.integers(n))
        centers[c] = X[idx]
        d2 = np.minimum(d2, np.sum((X - centers[c]) ** 2, axis=1))
    labels = None
    for _ in range(iters):
        dist = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new = np.argmin(dist, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(m):
            members = X[labels == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    return labels


def global_expert_fit(data: Dataset, fam: ExpFamilySpec, basis: PolyBasis, ridge=1e-8, max_iter=50, tol=1e-10):
    """Single-expert MLE on all data, started from the mean-matching intercept."""
    B = eval_basis(basis, data.X)
    theta = np.zeros(basis.J)
    theta[0] = expfam.natural_from_mean(fam, float(np.mean(data.Y)))
    return _fit_expert(fam, B, data.Y, np.ones(data.n), theta, ridge, max_iter, tol, data.n)


def init_params(
    data: Dataset,
    m: int,
    k: int,
    seed: int,
    family: ExpFamilySpec | str,
    *,
    restart: int = 0,
    ridge: float = 1e-8,
    max_iter: int = 50,
    tol: float = 1e-10,
) -> MoEParams:
    """k-means++ clusters on x, one expert per cluster, gate fitted to the clusters."""
    fam = parse_family(family) if isinstance(family, str) else family
    if data.n < m:
        raise DataError(f"need at least m={m} observations, got {data.n}")
    basis = PolyBasis(data.s, k)
    theta_g = global_expert_fit(data, fam, basis, ridge, max_iter, tol)
    if m == 1:
        return MoEParams(fam, basis, GateParams.uniform(1, data.s), theta_g[None, :])
    rng = make_rng(seed, "init", restart)
    labels = _kmeans(data.X, m, rng)
    B = eval_basis(basis, data.X)
    theta = np.tile(theta_g, (m, 1))
    for j in range(m):
        w = (labels == j).astype(float)
        if w.sum() > 0:
            theta[j] = _fit_expert(fam, B, data.Y, w, theta_g.copy(), ridge, max_iter, tol, data.n)
    onehot = np.eye(m)[labels]
    soft = (1 - INIT_LABEL_SMOOTHING) * onehot + INIT_LABEL_SMOOTHING / m
    gate = m_step_gate(soft, data, GateParams.uniform(m, data.s), ridge=ridge, max_iter=max_iter, tol=tol)
    return MoEParams(fam, basis, gate, theta)


def _check_fit_inputs(data: Dataset, cfg: FitConfig):
    if data.n == 0:
        raise DataError("cannot fit an empty dataset")
    expfam.check_support(cfg.family, data.Y)
    n_params = gate_param_count(cfg.m, data.s) + cfg.m * dimension(data.s, cfg.k)
    if data.n < n_params:
        raise DataError(f"n={data.n} is smaller than the parameter count {n_params}")


def run_em(model: MoEParams, data: Dataset, cfg: FitConfig, restart: int = 0) -> FitReport:
    """EM from a given starting model."""
    lj = expert_log_terms(model, data.X, data.Y)
    lse = logsumexp(lj, axis=1)
    L = float(np.mean(lse))
    if not np.isfinite(L):
        raise NumericalError(f"non-finite initial log-likelihood (restart {restart})")
    traj = [L]
    converged = False
    clip_events = starved_events = 0
    it = 0
    for it in range(1, cfg.max_em_iters + 1):
        tau = np.exp(lj - lse[:, None])
        gate = m_step_gate(
            tau, data, model.gate, x_scaled=model.scale_x(data.X),
            ridge=cfg.ridge, max_iter=cfg.inner_newton_iters, tol=cfg.inner_tol,
        )
        theta, starved = m_step_experts(
            tau, data, model, ridge=cfg.ridge, max_iter=cfg.inner_newton_iters, tol=cfg.inner_tol
        )
        starved_events += int(starved.sum())
        model = replace(model, gate=gate, experts=theta)
        lj = expert_log_terms(model, data.X, data.Y)
        lse = logsumexp(lj, axis=1)
        L_new = float(np.mean(lse))
        if not np.isfinite(L_new):
            raise NumericalError(
                f"non-finite log-likelihood at EM iteration {it} (restart {restart}); "
                f"gate |W|max={np.max(np.abs(gate.W), initial=0.0):.3g}, |theta|max={np.max(np.abs(theta)):.3g}"
            )
        traj.append(L_new)
        if abs(L_new - L) <= cfg.rel_tol * max(1.0, abs(L)):
            converged = True
            break
        L = L_new
    H = eval_basis(model.basis, model.scale_x(data.X)) @ model.experts.T
    clip_events = int(expfam.clip(model.family, H)[1].sum())
    return FitReport(model, traj, it, converged, restart, clip_events, starved_events)


def _one_restart(data: Dataset, cfg: FitConfig, r: int) -> FitReport:
    model = init_params(
        data, cfg.m, cfg.k, cfg.seed, cfg.family, restart=r,
        ridge=cfg.ridge, max_iter=cfg.inner_newton_iters, tol=cfg.inner_tol,
    )
    return run_em(model, data, cfg, restart=r)


def fit(data: Dataset, cfg: FitConfig) -> FitReport:
    """Best-of-``cfg.restarts`` EM fit; ties go to the lowest restart index."""
    _check_fit_inputs(data, cfg)
    workers = cfg.threads if cfg.threads > 0 else None
    if cfg.restarts == 1 or cfg.threads == 1:
        reports = [_one_restart(data, cfg, r) for r in range(cfg.restarts)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(lambda r: _one_restart(data, cfg, r), range(cfg.restarts)))
    best = reports[0]
    for rep in reports[1:]:
        if rep.loglik > best.loglik + TIE_TOL:
            best = rep
    best.restart_logliks = [rep.loglik for rep in reports]
    log.debug("fit: best restart %d of %d, L_n=%.10g", best.restart_index, cfg.restarts, best.loglik)
    return best
