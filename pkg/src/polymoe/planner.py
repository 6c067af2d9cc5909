"""Closed-form tradeoff between the number of experts m and the degree k.

With xi = k + 1 the surrogate risk is

    U(m, xi) = m^{-2 min(xi, alpha)/s} + m xi^s / n,

whose first term is the approximation rate and whose second term is a rough
parameter count over n.  Smoothness ``alpha`` may be ``math.inf``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from .errors import ConfigError
from .gating import gate_param_count
from .polybasis import dimension

V_FORMULAS = ("ms", "logistic")

# Reference values for the two tables at alpha=6, s=5; used only to
# annotate rows where recomputation disagrees with the printed figure.
REFERENCE_BUDGET_TABLE = {0: (214, 0.1169, 1284), 1: (117, 0.0221, 1287), 2: (49, 0.0094, 1274),
                          3: (21, 0.0077, 1271), 4: (10, 0.0100, 1310), 5: (5, 0.0210, 1285)}
REFERENCE_ACCURACY_TABLE = {0: (100000, 0.0100, 600000), 1: (316, 0.0100, 3476), 2: (46, 0.0101, 1196),
                            3: (18, 0.0098, 1098), 4: (10, 0.0100, 1310), 5: (7, 0.0099, 1799)}
REFERENCE_SETTING = (6, 5)  # (alpha, s)
REFERENCE_BUDGET = 1285
REFERENCE_TARGET = 0.01


def _check_alpha_s(alpha, s):
    if not alpha > 0:
        raise ConfigError("alpha must be positive")
    if int(s) != s or s < 1:
        raise ConfigError("s must be a positive integer")


def u_bound(m: float, xi: float, alpha: float, s: int, n: float) -> float:
    if m <= 0 or xi <= 0 or n <= 0:
        raise ConfigError("m, xi and n must be positive")
    _check_alpha_s(alpha, s)
    return m ** (-2.0 * min(xi, alpha) / s) + m * xi**s / n


def optimal_xi(C: float, alpha: float, s: int) -> float:
    """Minimiser of U over xi along m xi^s = C."""
    if not C > 0:
        raise ConfigError("budget C must be positive")
    _check_alpha_s(alpha, s)
    return min(alpha, C ** (1.0 / s) / math.e)


def optimal_m(C: float, alpha: float, s: int) -> float:
    if not C > 0:
        raise ConfigError("budget C must be positive")
    _check_alpha_s(alpha, s)
    if math.isinf(alpha):
        raise ConfigError("the budget-constrained optimum needs finite alpha; use near_parametric_plan")
    return max(math.e**s, C / alpha**s)


def rate_exponent(alpha: float, k: int, s: int) -> float:
    """Exponent r in the approximation rate m^{-r}."""
    _check_alpha_s(alpha, s)
    return 2.0 * min(alpha, k + 1) / s


def gate_count(m: int, s: int, v_formula: str = "ms") -> int:
    if v_formula == "ms":
        return m * s
    if v_formula == "logistic":
        return gate_param_count(m, s)
    raise ConfigError(f"unknown v_formula {v_formula!r}; expected one of {V_FORMULAS}")


def param_count(m: int, k: int, s: int, v_formula: str = "ms") -> int:
    return m * dimension(s, k) + gate_count(m, s, v_formula)


@dataclass
class TableRow:
    k: int
    m: int
    approx: float
    params: int
    note: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _approx(m: int, k: int, alpha: float, s: int) -> float:
    return float(m) ** (-rate_exponent(alpha, k, s))


def _annotate(rows, alpha, s, reference):
    if (alpha, s) != REFERENCE_SETTING:
        return
    for r in rows:
        ref = reference.get(r.k)
        if ref is None or ref[0] != r.m:
            continue
        notes = []
        if round(r.approx, 4) != ref[1]:
            notes.append(f"reference approx {ref[1]:.4f}; recomputed {r.approx:.4f}")
        if r.params != ref[2]:
            notes.append(f"reference params {ref[2]}; recomputed {r.params}")
        r.note = "; ".join(notes)


def budget_rows(budget: float, s: int, k_range=range(6), v_formula: str = "ms") -> list[tuple[int, int]]:
    """(k, m) pairs whose parameter count is closest to ``budget``."""
    out = []
    for k in k_range:
        per_expert = dimension(s, k) + gate_count(1, s, v_formula) if v_formula == "ms" else None
        if per_expert is not None:
            m = max(1, round(budget / per_expert))
        else:
            m = min(range(1, int(budget) + 2), key=lambda mm: (abs(param_count(mm, k, s, v_formula) - budget), mm))
        out.append((k, int(m)))
    return out


def table_fixed_estimation(alpha: float, s: int, rows=None, *, v_formula: str = "ms",
                           budget: float = REFERENCE_BUDGET) -> list[TableRow]:
    """Approximation error and parameter count for (k, m) rows at a common budget."""
    _check_alpha_s(alpha, s)
    if rows is None:
        rows = budget_rows(budget, s, v_formula=v_formula)
    out = []
    for k, m in rows:
        if m < 1 or k < 0:
            raise ConfigError("rows need m >= 1 and k >= 0")
        out.append(TableRow(int(k), int(m), _approx(m, k, alpha, s), param_count(m, k, s, v_formula)))
    _annotate(out, alpha, s, REFERENCE_BUDGET_TABLE)
    return out


def table_fixed_approx(alpha: float, s: int, target_approx: float = REFERENCE_TARGET, k_range=range(6),
                       *, v_formula: str = "ms") -> list[TableRow]:
    """For each k, the integer m whose approximation error is closest to the target.

    m = round(target^{-1/r}) with r the rate exponent, i.e. the nearest
    integer to the exact solution of m^{-r} = target.
    """
    _check_alpha_s(alpha, s)
    if not 0 < target_approx <= 1:
        raise ConfigError("target_approx must lie in (0, 1]")
    out = []
    for k in k_range:
        m = max(1, round(target_approx ** (-1.0 / rate_exponent(alpha, k, s))))
        out.append(TableRow(int(k), m, _approx(m, k, alpha, s), param_count(m, k, s, v_formula)))
    _annotate(out, alpha, s, REFERENCE_ACCURACY_TABLE)
    return out


def argmin_row(rows: list[TableRow], key: str) -> TableRow:
    return min(rows, key=lambda r: (getattr(r, key), r.k))


@dataclass
class Plan:
    m: float
    xi: float
    k: int | None
    u: float | None
    regime: str

    def to_dict(self) -> dict:
        return asdict(self)


def budget_plan(C: float, alpha: float, s: int, n: float | None = None) -> Plan:
    """Optimal (m, xi) at a fixed product m xi^s = C; real-valued."""
    xi = optimal_xi(C, alpha, s)
    m = C / xi**s if math.isinf(alpha) else optimal_m(C, alpha, s)
    u = u_bound(m, xi, alpha, s, n) if n else None
    return Plan(m, xi, max(0, math.ceil(xi) - 1), u, "budget")


def rate_optimal_plan(alpha: float, s: int, n: float, c1: float = 1.0, xi: float | None = None) -> Plan:
    """xi fixed at or above alpha and m = c1 n^{s/(s+2 alpha)}."""
    _check_alpha_s(alpha, s)
    if math.isinf(alpha):
        raise ConfigError("the polynomial-rate plan needs finite alpha")
    xi = alpha if xi is None else xi
    if xi < alpha:
        raise ConfigError("xi must be at least alpha")
    m = c1 * n ** (s / (s + 2.0 * alpha))
    return Plan(m, xi, max(0, math.ceil(xi) - 1), u_bound(m, xi, alpha, s, n), "rate_optimal")


def near_parametric_plan(s: int, n: float, m: int = 2) -> Plan:
    """Constant m >= 2 and xi = ceil(s ln n), for infinitely smooth targets."""
    if n < 3:
        raise ConfigError("n must be at least 3")
    if m < 2:
        raise ConfigError("m must be at least 2")
    xi = math.ceil(s * math.log(n))
    return Plan(m, xi, xi - 1, u_bound(m, xi, math.inf, s, n), "near_parametric")


def integer_candidates(plan: Plan, alpha: float, s: int, n: float) -> list[dict]:
    """Floor/ceil integerisations of (m, xi) with their U values, best first."""
    ms = sorted({max(1, math.floor(plan.m)), max(1, math.ceil(plan.m))})
    xis = sorted({max(1, math.floor(plan.xi)), max(1, math.ceil(plan.xi))})
    out = [{"m": m, "xi": xi, "k": xi - 1, "u": u_bound(m, xi, alpha, s, n)} for m in ms for xi in xis]
    return sorted(out, key=lambda d: (d["u"], d["m"], d["xi"]))
