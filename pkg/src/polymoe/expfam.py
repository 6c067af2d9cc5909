"""One-parameter exponential families in the form

    p(y | h) = exp{ y a(h) + b(h) + c(y) }

Each family exposes a(h), b(h), their first and second derivatives, the
mean map -b'(h)/a'(h), the variance (a''b' - b''a')/a'^3, the exact log base
measure c(y) and a sampler.  Evaluation clips h to a family-specific safe
interval so that e^h and friends never overflow.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import special, stats

from .errors import DataError

FAMILY_NAMES = ("poisson", "bernoulli", "gaussian", "exponential", "binomial")

# safe clipping bounds for h
_CLIP = {
    "poisson": (-30.0, 30.0),
    "bernoulli": (-30.0, 30.0),
    "binomial": (-30.0, 30.0),
    "exponential": (-1e6, -1e-6),
    "gaussian": (-1e6, 1e6),
}

# largest support we are willing to sum over exactly
MAX_SUPPORT_TERMS = 10_000


class DomainError(DataError):
    """Raised for non-finite natural arguments or responses outside the support."""


class FamilyEval(NamedTuple):
    a: np.ndarray
    b: np.ndarray
    da: np.ndarray
    db: np.ndarray
    dda: np.ndarray
    ddb: np.ndarray
    clipped: np.ndarray  # bool mask, True where h was moved to the safe interval


@dataclass(frozen=True)
class ExpFamilySpec:
    """A named one-parameter family.

    ``sigma2`` is the known variance for ``gaussian``; ``trials`` the known
    number of trials for ``binomial``.
    """

    name: str
    sigma2: float | None = None
    trials: int | None = None

    def __post_init__(self):
        if self.name not in FAMILY_NAMES:
            raise ValueError(f"unknown family {self.name!r}; expected one of {FAMILY_NAMES}")
        if self.name == "gaussian":
            if self.sigma2 is None:
                object.__setattr__(self, "sigma2", 1.0)
            if not (self.sigma2 > 0 and math.isfinite(self.sigma2)):
                raise ValueError("gaussian sigma2 must be a positive finite number")
        elif self.sigma2 is not None:
            raise ValueError("sigma2 only applies to the gaussian family")
        if self.name == "binomial":
            if self.trials is None or int(self.trials) != self.trials or self.trials < 1:
                raise ValueError("binomial needs a positive integer number of trials")
            object.__setattr__(self, "trials", int(self.trials))
        elif self.trials is not None:
            raise ValueError("trials only applies to the binomial family")

    @property
    def domain(self) -> tuple[float, float]:
        """Safe interval of natural arguments h."""
        return _CLIP[self.name]

    @property
    def discrete(self) -> bool:
        return self.name in ("poisson", "bernoulli", "binomial")

    def __str__(self) -> str:
        if self.name == "gaussian":
            return f"gaussian:sigma2={self.sigma2!r}"
        if self.name == "binomial":
            return f"binomial:n={self.trials}"
        return self.name


def parse_family(text: str) -> ExpFamilySpec:
    """Parse ``"poisson"``, ``"gaussian:sigma2=1.0"``, ``"binomial:n=10"``."""
    name, _, rest = text.strip().partition(":")
    name = name.strip().lower()
    opts = {}
    if rest:
        for item in rest.split(","):
            key, eq, val = item.partition("=")
            if not eq:
                raise ValueError(f"malformed family option {item!r} in {text!r}")
            opts[key.strip()] = val.strip()
    if name == "gaussian":
        extra = set(opts) - {"sigma2"}
        if extra:
            raise ValueError(f"unknown gaussian options {sorted(extra)}")
        return ExpFamilySpec("gaussian", sigma2=float(opts.get("sigma2", 1.0)))
    if name == "binomial":
        extra = set(opts) - {"n"}
        if extra or "n" not in opts:
            raise ValueError("binomial needs exactly the option n=<trials>")
        if not re.fullmatch(r"\d+", opts["n"]):
            raise ValueError(f"binomial trials must be an integer, got {opts['n']!r}")
        return ExpFamilySpec("binomial", trials=int(opts["n"]))
    if opts:
        raise ValueError(f"family {name!r} takes no options")
    return ExpFamilySpec(name)


def clip(fam: ExpFamilySpec, h) -> tuple[np.ndarray, np.ndarray]:
    h = np.asarray(h, dtype=float)
    if not np.all(np.isfinite(h)):
        raise DomainError("natural argument h must be finite")
    lo, hi = fam.domain
    hc = np.clip(h, lo, hi)
    return hc, hc != h


def family_eval(fam: ExpFamilySpec, h) -> FamilyEval:
    """a, b and their first two derivatives at (clipped) h."""
    h, clipped = clip(fam, h)
    one, zero = np.ones_like(h), np.zeros_like(h)
    name = fam.name
    if name == "poisson":
        eh = np.exp(h)
        return FamilyEval(h, -eh, one, -eh, zero, -eh, clipped)
    if name in ("bernoulli", "binomial"):
        n = 1.0 if name == "bernoulli" else float(fam.trials)
        p = special.expit(h)
        return FamilyEval(h, -n * np.logaddexp(0.0, h), one, -n * p, zero, -n * p * (1.0 - p), clipped)
    if name == "gaussian":
        s2 = fam.sigma2
        return FamilyEval(h / s2, -0.5 * h * h / s2, one / s2, -h / s2, zero, -one / s2, clipped)
    # exponential: rate -h
    return FamilyEval(h, np.log(-h), one, 1.0 / h, zero, -1.0 / (h * h), clipped)


def mean(fam: ExpFamilySpec, h):
    """Inverse link: -b'(h)/a'(h)."""
    ev = family_eval(fam, h)
    return _scalar(-ev.db / ev.da)


def variance(fam: ExpFamilySpec, h):
    ev = family_eval(fam, h)
    return _scalar((ev.dda * ev.db - ev.ddb * ev.da) / ev.da**3)


def check_support(fam: ExpFamilySpec, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise DomainError("response values must be finite")
    name = fam.name
    if name == "gaussian":
        return y
    if name == "exponential":
        ok = y >= 0
    else:
        ok = (y >= 0) & (y == np.floor(y))
        if name == "bernoulli":
            ok &= y <= 1
        elif name == "binomial":
            ok &= y <= fam.trials
    if not np.all(ok):
        bad = y[~ok].ravel()[0] if y.ndim else y
        raise DomainError(f"response {bad!r} outside the support of {fam}")
    return y


def log_c(fam: ExpFamilySpec, y) -> np.ndarray:
    """Exact log base measure c(y)."""
    y = check_support(fam, y)
    name = fam.name
    if name == "poisson":
        return -special.gammaln(y + 1.0)
    if name == "binomial":
        n = fam.trials
        return special.gammaln(n + 1.0) - special.gammaln(y + 1.0) - special.gammaln(n - y + 1.0)
    if name == "gaussian":
        return -0.5 * y * y / fam.sigma2 - 0.5 * math.log(2.0 * math.pi * fam.sigma2)
    return np.zeros_like(y)


def log_kernel(fam: ExpFamilySpec, y, h) -> np.ndarray:
    """y a(h) + b(h), i.e. the log density without c(y)."""
    ev = family_eval(fam, h)
    return np.asarray(y, dtype=float) * ev.a + ev.b


def log_density(fam: ExpFamilySpec, y, h):
    y = check_support(fam, y)
    return _scalar(log_kernel(fam, y, h) + log_c(fam, y))


def sample_y(fam: ExpFamilySpec, h, rng: np.random.Generator):
    """Draw responses at natural argument(s) h."""
    h, _ = clip(fam, h)
    name = fam.name
    if name == "poisson":
        out = rng.poisson(np.exp(h)).astype(float)
    elif name == "bernoulli":
        out = (rng.random(h.shape) < special.expit(h)).astype(float)
    elif name == "binomial":
        out = rng.binomial(fam.trials, special.expit(h)).astype(float)
    elif name == "gaussian":
        out = h + math.sqrt(fam.sigma2) * rng.standard_normal(h.shape)
    else:
        out = rng.exponential(1.0, h.shape) / (-h)
    return _scalar(out)


def natural_from_mean(fam: ExpFamilySpec, mu):
    """Inverse of ``mean``; used to seed Newton iterations."""
    mu = np.asarray(mu, dtype=float)
    lo, hi = fam.domain
    name = fam.name
    if name == "poisson":
        h = np.log(np.maximum(mu, 1e-12))
    elif name in ("bernoulli", "binomial"):
        n = 1.0 if name == "bernoulli" else fam.trials
        p = np.clip(mu / n, 1e-12, 1 - 1e-12)
        h = special.logit(p)
    elif name == "gaussian":
        h = mu
    else:
        h = -1.0 / np.maximum(mu, 1e-12)
    return _scalar(np.clip(h, lo, hi))


def support_grid(fam: ExpFamilySpec, h_max: float, tail: float = 1e-12) -> np.ndarray | None:
    """Values of y carrying all but ``tail`` of the mass for every h <= h_max.

    Returns None for continuous families or when more than
    ``MAX_SUPPORT_TERMS`` terms would be needed.
    """
    if fam.name == "bernoulli":
        return np.array([0.0, 1.0])
    if fam.name == "binomial":
        if fam.trials + 1 > MAX_SUPPORT_TERMS:
            return None
        return np.arange(fam.trials + 1, dtype=float)
    if fam.name == "poisson":
        lam = math.exp(min(max(h_max, fam.domain[0]), fam.domain[1]))
        top = stats.poisson.isf(tail, lam)
        if not math.isfinite(top) or top + 1 > MAX_SUPPORT_TERMS:
            return None
        return np.arange(int(top) + 1, dtype=float)
    return None


def _scalar(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x
