"""Deterministic approximation-rate probe.

The cube [-1, 1]^s (s in {1, 2}) is cut into equal cells, a degree-k
polynomial is fitted to h on each cell by least squares against the uniform
law, and the upper divergence of the resulting hard-gated mixture is
measured by Gauss-Legendre quadrature.  Fitting on finer and finer
partitions exposes the decay D(m) ~ r^{-2 min(alpha, k+1)/s}.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import log_softmax

from .errors import ConfigError
from .polybasis import PolyBasis, eval_basis
from .targets import TargetSpec

SHARPNESS = (1.0, 4.0, 16.0, 64.0)
# D at or below this multiple of sup|h|^2 is floating-point noise of an exact fit
REALIZABLE_RTOL = 1e-20


@dataclass
class CellFit:
    s: int
    k: int
    m_cells: int  # per axis
    n_quad: int
    centers: np.ndarray  # (r, s)
    half_width: float
    coefs: np.ndarray  # (r, J) in local coordinates t = (x - center) / half_width
    residual2: np.ndarray  # (r,) weighted squared residual, sums to D

    @property
    def r(self) -> int:
        return self.centers.shape[0]

    def local(self, X: np.ndarray) -> np.ndarray:
        """Evaluate every cell polynomial at every x: (n, r)."""
        basis = PolyBasis(self.s, self.k)
        out = np.empty((X.shape[0], self.r))
        for j, c in enumerate(self.centers):
            out[:, j] = eval_basis(basis, (X - c) / self.half_width) @ self.coefs[j]
        return out


def _check(target: TargetSpec, m_cells: int, k: int, n_quad: int):
    if target.s not in (1, 2):
        raise ConfigError("the probe supports s = 1 or s = 2")
    if m_cells < 1 or k < 0:
        raise ConfigError("need m_cells >= 1 and k >= 0")
    if n_quad < k + 1:
        raise ConfigError(f"n_quad={n_quad} cannot identify a degree-{k} fit; need at least {k + 1}")


def _cell_nodes(s: int, n_quad: int):
    t, w = leggauss(n_quad)
    T = np.stack([a.ravel() for a in np.meshgrid(*[t] * s, indexing="ij")], axis=1)
    Wt = np.prod(np.stack([a.ravel() for a in np.meshgrid(*[w] * s, indexing="ij")], axis=1), axis=1)
    return T, Wt / 2.0**s  # weights of the uniform law on the reference cell


def _centers(s: int, m_cells: int) -> np.ndarray:
    c1 = -1.0 + (2.0 * np.arange(m_cells) + 1.0) / m_cells
    return np.stack([a.ravel() for a in np.meshgrid(*[c1] * s, indexing="ij")], axis=1)


def piecewise_fit(target: TargetSpec, m_cells: int, k: int, n_quad: int = 16) -> CellFit:
    """Per-cell L2(P_x)-best degree-k polynomial on a uniform partition."""
    _check(target, m_cells, k, n_quad)
    s = target.s
    T, wt = _cell_nodes(s, n_quad)
    B = eval_basis(PolyBasis(s, k), T)
    sw = np.sqrt(wt)
    Bw = B * sw[:, None]
    hw = 1.0 / m_cells
    centers = _centers(s, m_cells)
    r = centers.shape[0]
    coefs = np.empty((r, B.shape[1]))
    res2 = np.empty(r)
    for j, c in enumerate(centers):
        y = target(c + hw * T)
        coefs[j] = np.linalg.lstsq(Bw, y * sw, rcond=None)[0]
        res2[j] = wt @ (B @ coefs[j] - y) ** 2 / r
    return CellFit(s, k, m_cells, n_quad, centers, hw, coefs, res2)


def probe_divergence(target: TargetSpec, fit: CellFit) -> float:
    """Upper divergence of the hard-gated piecewise fit."""
    return float(np.sum(fit.residual2))


def soft_gate_log_weights(fit: CellFit, X: np.ndarray, beta: float) -> np.ndarray:
    """Logistic gates with logits beta/w^2 (2 c.x - |c|^2); argmax is the containing cell."""
    w = fit.half_width
    C = fit.centers
    logits = beta / w**2 * (2.0 * X @ C.T - np.sum(C * C, axis=1)[None, :])
    return log_softmax(logits, axis=1)


def soft_probe_divergence(target: TargetSpec, fit: CellFit, beta: float, n_quad: int | None = None) -> float:
    """Upper divergence when the cell indicators are replaced by logistic gates of sharpness beta."""
    nq = n_quad or max(fit.n_quad, 8)
    T, wt = _cell_nodes(fit.s, nq)
    total = 0.0
    for c in fit.centers:
        X = c + fit.half_width * T
        G = np.exp(soft_gate_log_weights(fit, X, beta))
        err = (fit.local(X) - target(X)[:, None]) ** 2
        total += wt @ np.sum(G * err, axis=1) / fit.r
    return float(total)


@dataclass
class ProbeResult:
    ms: list[int]
    rs: list[int]
    Ds: list[float]
    slope: float | None
    theory_slope: float
    flagged: bool = False
    message: str = ""
    soft: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def rate_slope(target: TargetSpec, ms, k: int, n_quad: int = 16) -> ProbeResult:
    """Least-squares slope of log D against log r over a sweep of partition sizes."""
    ms = [int(m) for m in ms]
    if len(ms) < 4:
        raise ConfigError("need at least four partition sizes")
    if any(b <= a for a, b in zip(ms, ms[1:])):
        raise ConfigError("partition sizes must be strictly increasing")
    rs = [m**target.s for m in ms]
    Ds = [probe_divergence(target, piecewise_fit(target, m, k, n_quad)) for m in ms]
    theory = -2.0 * min(target.alpha, k + 1) / target.s
    if min(Ds) <= REALIZABLE_RTOL * max(1.0, target.sup_abs_h) ** 2:
        return ProbeResult(ms, rs, Ds, None, theory, True, "zero divergence: target is realizable, slope undefined")
    slope = float(np.polyfit(np.log(rs), np.log(Ds), 1)[0])
    return ProbeResult(ms, rs, Ds, slope, theory)


def slope_so_far(rs, Ds) -> list[float | None]:
    """Running log-log slope, for progressive CSV output."""
    out: list[float | None] = [None]
    for i in range(1, len(rs)):
        if min(Ds[: i + 1]) <= 0:
            out.append(None)
        else:
            out.append(float(np.polyfit(np.log(rs[: i + 1]), np.log(Ds[: i + 1]), 1)[0]))
    return out


def bound_constant(result: ProbeResult, alpha: float, k: int, s: int) -> list[float]:
    """D(m) r^{2 min(alpha, k+1)/s}; bounded if the rate holds."""
    e = 2.0 * min(alpha, k + 1) / s
    return [d * r**e for d, r in zip(result.Ds, result.rs)]


def sharpness_sweep(target: TargetSpec, fit: CellFit, betas=SHARPNESS) -> dict[float, float]:
    return {float(b): soft_probe_divergence(target, fit, b) for b in betas}

