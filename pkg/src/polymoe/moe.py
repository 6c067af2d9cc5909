"""Mixture-of-experts conditional density with polynomial GLM experts.

    f(y | x) = sum_j g_j(x; W) exp{ y a(h_k(x; theta_j)) + b(h_k(x; theta_j)) + c(y) }

The covariate density p_x is common to model and target and cancels from
likelihood ratios, so only the conditional is represented here.
All mixture arithmetic is done in log space.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.special import logsumexp, softmax

from . import expfam
from .expfam import ExpFamilySpec
from .gating import GateParams, augment, gate_log_weights, gate_param_count, gate_weights
from .polybasis import PolyBasis, eval_basis


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray  # (n, s)
    Y: np.ndarray  # (n,)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Y, dtype=float).ravel()
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.shape[0] != Y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]} entries")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("dataset contains non-finite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def s(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True, eq=False)
class MoEParams:
    family: ExpFamilySpec
    basis: PolyBasis
    gate: GateParams
    experts: np.ndarray  # (m, J), row j is theta_j in graded-lex order
    x_offset: np.ndarray | None = None
    x_scale: np.ndarray | None = None

    def __post_init__(self):
        th = np.array(self.experts, dtype=float).reshape(self.gate.m, -1)
        if th.shape[1] != self.basis.J:
            raise ValueError(f"expert coefficients must have length {self.basis.J}")
        if self.gate.s != self.basis.s:
            raise ValueError("gate and basis disagree on the covariate dimension")
        if not np.all(np.isfinite(th)):
            raise ValueError("expert coefficients must be finite")
        th.setflags(write=False)
        object.__setattr__(self, "experts", th)
        s = self.basis.s
        off = np.zeros(s) if self.x_offset is None else np.asarray(self.x_offset, dtype=float).reshape(s)
        sc = np.ones(s) if self.x_scale is None else np.asarray(self.x_scale, dtype=float).reshape(s)
        if np.any(sc <= 0):
            raise ValueError("x_scale entries must be positive")
        object.__setattr__(self, "x_offset", off)
        object.__setattr__(self, "x_scale", sc)

    @property
    def m(self) -> int:
        return self.gate.m

    @property
    def s(self) -> int:
        return self.basis.s

    @property
    def k(self) -> int:
        return self.basis.k

    @property
    def n_params(self) -> int:
        return gate_param_count(self.m, self.s) + self.m * self.basis.J

    def scale_x(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.x_offset) / self.x_scale

    def to_vector(self) -> np.ndarray:
        """Flat parameters: gate W row-major, then theta_1 ... theta_m."""
        return np.concatenate([self.gate.W.ravel(), self.experts.ravel()])

    def with_vector(self, vec) -> "MoEParams":
        vec = np.asarray(vec, dtype=float)
        ng = gate_param_count(self.m, self.s)
        if vec.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {vec.shape}")
        gate = GateParams(self.m, self.s, vec[:ng])
        return replace(self, gate=gate, experts=vec[ng:].reshape(self.m, -1))

    def permuted(self, perm) -> "MoEParams":
        """Relabel experts; new expert i is old expert perm[i]."""
        perm = np.asarray(perm)
        full = np.vstack([self.gate.W, np.zeros((1, self.s + 1))])[perm]
        W = full[:-1] - full[-1]
        return replace(self, gate=GateParams(self.m, self.s, W), experts=self.experts[perm])


def uniform_sampler(s: int) -> Callable[[np.random.Generator, int], np.ndarray]:
    def draw(rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, size=(n, s))

    return draw


@dataclass
class _Parts:
    B: np.ndarray  # (n, J) basis at scaled covariates
    Xs: np.ndarray  # (n, s) scaled covariates
    ev: expfam.FamilyEval  # each field (n, m)
    log_gate: np.ndarray  # (n, m)
    kernel: np.ndarray  # (n, m): y a(h) + b(h)


def _parts(model: MoEParams, X, Y) -> _Parts:
    Xs = model.scale_x(np.atleast_2d(X))
    B = eval_basis(model.basis, Xs)
    H = B @ model.experts.T
    ev = expfam.family_eval(model.family, H)
    kernel = Y[:, None] * ev.a + ev.b
    return _Parts(B, Xs, ev, gate_log_weights(model.gate, Xs), kernel)


def expert_natural(model: MoEParams, X) -> tuple[np.ndarray, expfam.FamilyEval, np.ndarray]:
    """Raw polynomial values h_k(x; theta_j), family terms at them, log gates; all (n, m)."""
    Xs = model.scale_x(np.atleast_2d(X))
    H = eval_basis(model.basis, Xs) @ model.experts.T
    return H, expfam.family_eval(model.family, H), gate_log_weights(model.gate, Xs)


def _as_batch(model, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    single = y.ndim == 0
    X = x.reshape(-1, model.s)
    Y = y.reshape(-1)
    if X.shape[0] != Y.shape[0]:
        raise ValueError("x and y batch sizes differ")
    expfam.check_support(model.family, Y)
    return X, Y, single


def expert_log_terms(model: MoEParams, X, Y) -> np.ndarray:
    """log g_j(x) + y a(h_j) + b(h_j), shape (n, m); c(y) excluded."""
    p = _parts(model, np.atleast_2d(X), np.asarray(Y, dtype=float).ravel())
    return p.log_gate + p.kernel


def cond_log_density(model: MoEParams, x, y):
    """log f(y | x) including c(y)."""
    X, Y, single = _as_batch(model, x, y)
    out = logsumexp(expert_log_terms(model, X, Y), axis=1) + expfam.log_c(model.family, Y)
    return float(out[0]) if single else out


def responsibilities(model: MoEParams, x, y):
    """Posterior expert probabilities given (x, y)."""
    X, Y, single = _as_batch(model, x, y)
    tau = softmax(expert_log_terms(model, X, Y), axis=1)
    return tau[0] if single else tau


def log_likelihood(model: MoEParams, data: Dataset) -> float:
    """Mean log-likelihood with exp(c(y)) p_x divided out."""
    if data.n == 0:
        raise ValueError("log-likelihood of an empty dataset is undefined")
    return float(np.mean(logsumexp(expert_log_terms(model, data.X, data.Y), axis=1)))


def loglik_gradient(model: MoEParams, data: Dataset) -> np.ndarray:
    """Analytic gradient of ``log_likelihood`` in the layout of ``to_vector``."""
    if data.n == 0:
        raise ValueError("gradient of an empty dataset is undefined")
    p = _parts(model, data.X, data.Y)
    log_joint = p.log_gate + p.kernel
    tau = softmax(log_joint, axis=1)
    g = np.exp(p.log_gate)
    n = data.n
    grad_W = ((tau - g)[:, :-1]).T @ augment(p.Xs) / n
    score = (data.Y[:, None] * p.ev.da + p.ev.db) * ~p.ev.clipped
    grad_theta = (tau * score).T @ p.B / n
    return np.concatenate([grad_W.ravel(), grad_theta.ravel()])


def em_lower_bound(model: MoEParams, data: Dataset, tau: np.ndarray) -> float:
    """n^-1 sum_ij tau_ij (log g_ij + log pi_ij - log tau_ij), c(y) excluded.

    Never exceeds ``log_likelihood`` and equals it when ``tau`` are the
    model's own responsibilities.
    """
    lj = expert_log_terms(model, data.X, data.Y)
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(tau > 0, tau * np.log(tau), 0.0)
    return float((np.sum(tau * lj) - np.sum(ent)) / data.n)


def sample_from_model(model: MoEParams, x_sampler, n: int, rng: np.random.Generator) -> Dataset:
    """Draw x from ``x_sampler(rng, n)``, an expert from the gate, then y."""
    if n == 0:
        return Dataset(np.empty((0, model.s)), np.empty(0))
    X = np.asarray(x_sampler(rng, n), dtype=float).reshape(n, model.s)
    Xs = model.scale_x(X)
    cdf = np.cumsum(gate_weights(model.gate, Xs), axis=1)
    u = rng.random(n)
    j = np.minimum((u[:, None] > cdf).sum(axis=1), model.m - 1)
    B = eval_basis(model.basis, Xs)
    h = np.einsum("ij,ij->i", B, model.experts[j])
    Y = expfam.sample_y(model.family, h, rng)
    return Dataset(X, np.atleast_1d(Y))
