"""Monomial bases of total degree <= k in s variables.

Multi-indices are kept in graded lexicographic order: total degree ascending,
and within a degree the exponent of x1 descending, then x2, and so on.  For
s=2, k=2 this gives 1, x1, x2, x1^2, x1 x2, x2^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

MAX_DIMENSION = 2**31


def dimension(s: int, k: int) -> int:
    """Number of monomials of degree <= k in s variables, C(k+s, k)."""
    if s < 1 or k < 0:
        raise ValueError(f"need s >= 1 and k >= 0, got s={s}, k={k}")
    J = comb(k + s, k)
    if J >= MAX_DIMENSION:
        raise OverflowError(f"basis dimension C({k + s},{k}) exceeds 2^31")
    return J


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def graded_lex_indices(s: int, k: int) -> tuple[tuple[int, ...], ...]:
    dimension(s, k)
    return tuple(r for d in range(k + 1) for r in _compositions(d, s))


@dataclass(frozen=True)
class PolyBasis:
    s: int
    k: int
    indices: tuple[tuple[int, ...], ...] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "indices", graded_lex_indices(self.s, self.k))
        object.__setattr__(self, "_exps", np.array(self.indices, dtype=int).reshape(-1, self.s))

    @property
    def J(self) -> int:
        return len(self.indices)


def eval_basis(basis: PolyBasis, x) -> np.ndarray:
    """Monomials at x; x of shape (s,) gives (J,), shape (n, s) gives (n, J)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    X = x.reshape(1, -1) if single else x
    if X.shape[1] != basis.s:
        raise ValueError(f"expected {basis.s} covariates, got {X.shape[1]}")
    # powers[i, d, v] = X[i, v] ** d
    powers = X[:, None, :] ** np.arange(basis.k + 1)[None, :, None]
    exps = basis._exps
    B = np.ones((X.shape[0], basis.J))
    for v in range(basis.s):
        B *= powers[:, exps[:, v], v]
    return B[0] if single else B


def eval_poly(basis: PolyBasis, theta, x):
    """h_k(x; theta) = <theta, basis(x)>."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (basis.J,):
        raise ValueError(f"theta must have length {basis.J}, got shape {theta.shape}")
    out = eval_basis(basis, x) @ theta
    return float(out) if np.ndim(out) == 0 else out
