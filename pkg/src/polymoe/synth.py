"""End-to-end convergence sweeps: sample from a known target, fit, measure KL.

Every (n, m, replication) cell is an independent job.  Data for a given
(n, replication) are shared across m (common random numbers), fit seeds are
derived from (seed, n, m, replication), and results are assembled in
(n, m, replication) order, so tables do not depend on the worker count.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from .divergence import kl_mc
from .em import FitConfig, fit
from .errors import ConfigError, DataError, NumericalError
from .targets import TargetSpec, make_target, sample_target, target_from_dict, target_to_dict

log = logging.getLogger(__name__)

ROW_FIELDS = ("n", "m", "k", "rep", "kl", "se", "loglik", "iters")
FIT_KEYS = {"max_em_iters", "rel_tol", "inner_newton_iters", "inner_tol", "restarts", "ridge"}

__all__ = ["ExperimentConfig", "run_rate_experiment", "path_m", "make_target", "sample_target", "ROW_FIELDS"]


@dataclass
class ExperimentConfig:
    """A sweep over sample sizes, either on a fixed m grid or along m = c n^{s/(2 tau + s)}."""

    target: dict
    n_grid: list[int]
    k: int = 1
    m_grid: list[int] | None = None
    path_c: float = 1.0
    fit: dict = field(default_factory=dict)
    n_mc: int = 2000
    replications: int = 10
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if isinstance(self.target, TargetSpec):
            self.target = target_to_dict(self.target)
        self.target_spec = target_from_dict(self.target)
        self.n_grid = [int(n) for n in self.n_grid]
        if self.m_grid is not None:
            self.m_grid = [int(m) for m in self.m_grid]
        for name, grid in (("n_grid", self.n_grid), ("m_grid", self.m_grid)):
            if grid is None:
                continue
            if not grid or any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] < 1:
                raise ConfigError(f"{name} must be non-empty, positive and strictly ascending")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.k < 0 or self.path_c <= 0 or self.n_mc < 100 or self.threads < 0:
            raise ConfigError("need k >= 0, path_c > 0, n_mc >= 100 and threads >= 0")
        extra = set(self.fit) - FIT_KEYS
        if extra:
            raise ConfigError(f"unknown fit keys {sorted(extra)}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        allowed = {f.name for f in fields(cls)}
        extra = set(d) - allowed
        if extra:
            raise ConfigError(f"unknown experiment keys {sorted(extra)}")
        missing = {"target", "n_grid"} - set(d)
        if missing:
            raise ConfigError(f"experiment config missing {sorted(missing)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def tau(self) -> float:
        return min(self.target_spec.alpha, self.k + 1)

    def cells(self) -> list[tuple[int, int]]:
        if self.m_grid is not None:
            return [(n, m) for n in self.n_grid for m in self.m_grid]
        return [(n, path_m(n, self.tau, self.target_spec.s, self.path_c)) for n in self.n_grid]


def path_m(n: int, tau: float, s: int, c: float = 1.0) -> int:
    """m = round(c n^{s/(2 tau + s)}), at least 1."""
    return max(1, round(c * n ** (s / (2.0 * tau + s))))


def _job_seed(seed: int, *keys: int) -> int:
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _run_cell(cfg: ExperimentConfig, n: int, m: int, rep: int) -> dict:
    target = cfg.target_spec
    data = sample_target(target, n, cfg.seed, "data", n, rep)
    fcfg = FitConfig(family=target.family, m=m, k=cfg.k, seed=_job_seed(cfg.seed, n, m, rep), threads=1, **cfg.fit)
    row = {"n": n, "m": m, "k": cfg.k, "rep": rep}
    try:
        rep_fit = fit(data, fcfg)
        est = kl_mc(target, rep_fit.model, cfg.n_mc, _job_seed(cfg.seed, n, rep))
    except (DataError, NumericalError) as exc:
        log.warning("cell n=%d m=%d rep=%d failed: %s", n, m, rep, exc)
        row.update(kl=math.nan, se=math.nan, loglik=math.nan, iters=0, error=str(exc))
        return row
    row.update(kl=est.value, se=est.std_error, loglik=rep_fit.loglik, iters=rep_fit.iterations)
    return row


def _slope(ns, ys) -> float | None:
    if len(ns) < 2 or min(ys) <= 0:
        return None
    return float(np.polyfit(np.log(ns), np.log(ys), 1)[0])


def summarize(cfg: ExperimentConfig, rows: list[dict]) -> dict:
    cells = []
    for n, m in cfg.cells():
        kls = np.array([r["kl"] for r in rows if r["n"] == n and r["m"] == m and not math.isnan(r["kl"])])
        failed = sum(1 for r in rows if r["n"] == n and r["m"] == m and math.isnan(r["kl"]))
        cell = {"n": n, "m": m, "n_ok": int(kls.size), "n_failed": failed}
        if kls.size:
            q1, med, q3 = np.percentile(kls, [25, 50, 75])
            cell.update(median_kl=float(med), iqr_kl=float(q3 - q1), min_kl=float(kls.min()), max_kl=float(kls.max()))
        else:
            log.warning("cell n=%d m=%d has no successful replications; excluded from the slope", n, m)
        cells.append(cell)
    s = cfg.target_spec.s
    tau = cfg.tau
    summary = {
        "cells": cells,
        "tau": "inf" if math.isinf(tau) else tau,
        "theory_exponent": 2 * tau / (2 * tau + s) if math.isfinite(tau) else 1.0,
    }
    if cfg.m_grid is None:
        ok = [c for c in cells if "median_kl" in c]
        meds = [c["median_kl"] for c in ok]
        summary["path_slope"] = _slope([c["n"] for c in ok], meds)
        summary["strictly_decreasing"] = bool(len(meds) == len(cells) and all(b < a for a, b in zip(meds, meds[1:])))
        summary["half_rate_bound"] = -0.5 * summary["theory_exponent"]
    else:
        summary["slopes_by_m"] = {
            str(m): _slope([c["n"] for c in cells if c["m"] == m and "median_kl" in c],
                           [c["median_kl"] for c in cells if c["m"] == m and "median_kl" in c])
            for m in cfg.m_grid
        }
    return summary


def run_rate_experiment(cfg: ExperimentConfig) -> tuple[list[dict], dict]:
    """Tidy per-replication rows and a summary with medians and slopes."""
    jobs = [(n, m, rep) for n, m in cfg.cells() for rep in range(cfg.replications)]
    if cfg.threads == 1:
        rows = [_run_cell(cfg, *j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=cfg.threads or None) as pool:
            rows = list(pool.map(lambda j: _run_cell(cfg, *j), jobs))
    return rows, summarize(cfg, rows)

