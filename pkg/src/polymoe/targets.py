"""Ground-truth conditional densities with declared smoothness.

A target is a family plus a function h on [-1, 1]^s; the response law is
p(y | x) = exp{ y a(h(x)) + b(h(x)) + c(y) } with x uniform on the cube.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import expfam
from ._rng import make_rng
from .errors import ConfigError
from .expfam import ExpFamilySpec, parse_family
from .moe import Dataset
from .polybasis import PolyBasis, dimension, eval_basis

KINDS = ("smooth_sin", "trunc_power", "polynomial", "custom")
INF = math.inf


@dataclass(frozen=True, eq=False)
class TargetSpec:
    family: ExpFamilySpec
    h: Callable[[np.ndarray], np.ndarray]  # (n, s) -> (n,)
    alpha: float
    s: int
    kind: str = "custom"
    params: dict = field(default_factory=dict)
    px: str = "uniform"
    sup_abs_h: float = field(init=False)

    def __post_init__(self):
        if self.px != "uniform":
            raise ConfigError(f"only the uniform covariate law is supported, got {self.px!r}")
        if not self.alpha > 0:
            raise ConfigError("smoothness alpha must be positive")
        grid = _sup_grid(self.s)
        vals = np.asarray(self.h(grid), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ConfigError("target h must be finite on [-1, 1]^s")
        lo, hi = self.family.domain
        if vals.min() < lo or vals.max() > hi:
            raise ConfigError(f"target h leaves the {self.family} natural domain [{lo:g}, {hi:g}] on [-1, 1]^s")
        object.__setattr__(self, "sup_abs_h", float(np.max(np.abs(vals))))

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.s)
        return np.asarray(self.h(X), dtype=float).reshape(-1)

    def sample_x(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, size=(n, self.s))

    def log_density(self, X, Y) -> np.ndarray:
        return expfam.log_density(self.family, np.asarray(Y, dtype=float), self(X))


def _sup_grid(s: int) -> np.ndarray:
    pts = 201 if s == 1 else (41 if s == 2 else 0)
    if pts:
        axes = np.meshgrid(*[np.linspace(-1, 1, pts)] * s, indexing="ij")
        return np.stack([a.ravel() for a in axes], axis=1)
    rng = np.random.default_rng(0)
    return np.vstack([rng.uniform(-1, 1, size=(20_000, s)), np.ones((1, s)), -np.ones((1, s))])


def make_target(kind: str, alpha=None, s: int = 1, family="poisson", **params) -> TargetSpec:
    """Build a target of a given kind.

    smooth_sin
        h(x) = offset + amplitude * sin(omega * sum(x)); alpha is infinite.
    trunc_power
        h(x) = offset + scale * sum_i max(0, x_i - knot_i)^alpha, which has
        alpha - 1 continuous derivatives and a bounded alpha-th one.
    polynomial
        h(x) = <coeffs, basis_degree(x)> in graded-lex order; realizable by a
        single expert of that degree.
    """
    fam = parse_family(family) if isinstance(family, str) else family
    if s < 1:
        raise ConfigError("s must be >= 1")
    if kind == "smooth_sin":
        A = float(params.pop("amplitude", 1.0))
        w = float(params.pop("omega", 1.0))
        off = float(params.pop("offset", 0.0))
        _no_extra(kind, params)
        p = {"amplitude": A, "omega": w, "offset": off}
        return TargetSpec(fam, lambda X: off + A * np.sin(w * X.sum(axis=1)), INF, s, kind, p)
    if kind == "trunc_power":
        if alpha is None or not math.isfinite(alpha) or alpha < 1:
            raise ConfigError("trunc_power needs a finite alpha >= 1")
        knots = np.broadcast_to(np.asarray(params.pop("knots", 0.0), dtype=float), (s,)).copy()
        scale = float(params.pop("scale", 1.0))
        off = float(params.pop("offset", 0.0))
        _no_extra(kind, params)
        a = float(alpha)
        p = {"knots": knots.tolist(), "scale": scale, "offset": off}
        return TargetSpec(
            fam, lambda X: off + scale * np.sum(np.maximum(0.0, X - knots) ** a, axis=1), a, s, kind, p
        )
    if kind == "polynomial":
        degree = int(params.pop("degree"))
        coeffs = np.asarray(params.pop("coeffs"), dtype=float)
        _no_extra(kind, params)
        if coeffs.shape != (dimension(s, degree),):
            raise ConfigError(f"polynomial of degree {degree} in {s} variables needs {dimension(s, degree)} coeffs")
        basis = PolyBasis(s, degree)
        p = {"degree": degree, "coeffs": coeffs.tolist()}
        return TargetSpec(fam, lambda X: eval_basis(basis, X) @ coeffs, INF, s, kind, p)
    raise ConfigError(f"unknown target kind {kind!r}; expected one of {KINDS[:3]}")


def _no_extra(kind, params):
    if params:
        raise ConfigError(f"unknown parameters for {kind}: {sorted(params)}")


def sample_target(target: TargetSpec, n: int, seed: int, *keys) -> Dataset:
    """i.i.d. draws: x uniform on the cube, y from the family at h(x)."""
    rng = make_rng(seed, "sample", *keys)
    X = target.sample_x(rng, n)
    Y = expfam.sample_y(target.family, target(X), rng) if n else np.empty(0)
    return Dataset(X, np.atleast_1d(Y))


def target_to_dict(target: TargetSpec) -> dict:
    if target.kind == "custom":
        raise ConfigError("custom targets cannot be serialized")
    return {
        "family": str(target.family),
        "kind": target.kind,
        "alpha": "inf" if math.isinf(target.alpha) else target.alpha,
        "s": target.s,
        "params": dict(target.params),
        "px": target.px,
    }


def target_from_dict(d: dict) -> TargetSpec:
    d = dict(d)
    allowed = {"family", "kind", "alpha", "s", "params", "px"}
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown target keys {sorted(extra)}")
    if d.get("px", "uniform") != "uniform":
        raise ConfigError("only px='uniform' is supported")
    alpha = d.get("alpha")
    if isinstance(alpha, str):
        alpha = float(alpha)
    try:
        return make_target(d["kind"], alpha, int(d.get("s", 1)), d.get("family", "poisson"), **dict(d.get("params", {})))
    except KeyError as e:
        raise ConfigError(f"target definition missing {e}") from None
    except ValueError as e:
        raise ConfigError(str(e)) from None
