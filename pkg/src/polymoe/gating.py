"""Multinomial-logistic gate with a pinned reference expert.

Expert m always has logit 0; the other m-1 experts have affine logits
W[j] @ (1, x1, ..., xs).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class GateParams:
    m: int
    s: int
    W: np.ndarray  # (m-1, s+1), intercept column first

    def __post_init__(self):
        if self.m < 1 or self.s < 1:
            raise ValueError("gate needs m >= 1 and s >= 1")
        W = np.asarray(self.W, dtype=float).reshape(self.m - 1, self.s + 1)
        if not np.all(np.isfinite(W)):
            raise ValueError("gate parameters must be finite")
        W.setflags(write=False)
        object.__setattr__(self, "W", W)

    @classmethod
    def uniform(cls, m: int, s: int) -> "GateParams":
        return cls(m, s, np.zeros((m - 1, s + 1)))

    @property
    def pinned_expert(self) -> int:
        return self.m


def gate_param_count(m: int, s: int) -> int:
    """(m-1)(s+1) free logit coefficients."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return (m - 1) * (s + 1)


def augment(X: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((X.shape[0], 1)), X])


def gate_logits(gp: GateParams, X: np.ndarray) -> np.ndarray:
    """(n, m) logits with the reference column fixed at zero."""
    Xa = augment(np.atleast_2d(X))
    return np.hstack([Xa @ gp.W.T, np.zeros((Xa.shape[0], 1))])


def gate_log_weights(gp: GateParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    X = x.reshape(1, -1) if single else x
    if X.shape[1] != gp.s:
        raise ValueError(f"expected {gp.s} covariates, got {X.shape[1]}")
    z = gate_logits(gp, X)
    z -= z.max(axis=1, keepdims=True)
    out = z - np.log(np.sum(np.exp(z), axis=1, keepdims=True))
    return out[0] if single else out


def gate_weights(gp: GateParams, x) -> np.ndarray:
    """Mixture weights g_j(x); rows sum to one."""
    lw = gate_log_weights(gp, x)
    w = np.exp(lw)
    return w / w.sum(axis=-1, keepdims=True)
