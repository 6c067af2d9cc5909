"""Command-line entry point: ``polymoe {fit,kl,plan,table,rate,experiment}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.  Failures print a one-line JSON object to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__, planner, probe
from . import io as pio
from .divergence import hellinger_mc, kl_mc, upper_divergence
from .em import FitConfig, fit
from .errors import ConfigError, DataError, NumericalError
from .moe import Dataset
from .synth import ROW_FIELDS, ExperimentConfig, run_rate_experiment
from .targets import make_target, target_from_dict, target_to_dict

log = logging.getLogger("polymoe")

EXIT_CODES = {ConfigError: 2, DataError: 3, NumericalError: 4}
FIT_CONFIG_KEYS = {f.name for f in fields(FitConfig)}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _alpha(text: str) -> float:
    if text.lower() in ("inf", "infinity"):
        return math.inf
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid alpha {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("alpha must be positive")
    return v


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def resolve_threads(requested: int) -> int:
    env = os.environ.get("POLYMOE_THREADS")
    if env is not None:
        try:
            requested = int(env)
        except ValueError:
            raise ConfigError(f"POLYMOE_THREADS must be an integer, got {env!r}") from None
    if requested < 0:
        raise ConfigError("threads must be >= 0")
    return requested if requested > 0 else (os.cpu_count() or 1)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _read_config(path: str | None) -> dict:
    if path is None:
        return {}
    d = pio.read_json(path)
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: configuration must be a JSON object")
    return d


# -- fit ----------------------------------------------------------------------

def _cmd_fit(args) -> None:
    cfg = _read_config(args.config)
    extra = set(cfg) - FIT_CONFIG_KEYS
    if extra:
        raise ConfigError(f"unknown fit config keys {sorted(extra)}")
    for key in ("family", "m", "k", "restarts"):
        v = getattr(args, key)
        if v is not None:
            cfg[key] = v
    if args.seed_given:
        cfg["seed"] = args.seed
    if "family" not in cfg:
        raise ConfigError("family must be given in the config or with --family")
    cfg["threads"] = args.threads
    try:
        fcfg = FitConfig(**cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    data = pio.read_dataset(args.data)
    lo, hi = data.X.min(axis=0), data.X.max(axis=0)
    offset = (hi + lo) / 2.0
    scale = np.where(hi > lo, (hi - lo) / 2.0, 1.0)
    report = fit(Dataset((data.X - offset) / scale, data.Y), fcfg)
    model = replace(report.model, x_offset=offset, x_scale=scale)
    public = {k: v for k, v in fcfg.to_dict().items() if k != "threads"}
    meta = pio.meta_block(fcfg.seed, public)
    pio.write_model(args.out, model, meta)
    if args.report:
        pio.write_json(args.report, {"meta": meta, "config": public, **report.to_dict()})


# -- kl -----------------------------------------------------------------------

def _cmd_kl(args) -> None:
    try:
        target = target_from_dict(pio.read_json(args.target))
    except (TypeError, AttributeError) as exc:
        raise ConfigError(f"malformed target JSON: {exc}") from None
    model = pio.read_model(args.model)
    est = kl_mc(target, model, args.n_mc, args.seed, method=args.method)
    config = {"target": target_to_dict(target), "model": pio.model_to_dict(model), "n_mc": args.n_mc,
              "method": args.method}
    out = {"meta": pio.meta_block(args.seed, config), "kl": est.to_dict()}
    if args.hellinger:
        out["hellinger"] = hellinger_mc(target, model, args.n_mc, args.seed, method=args.method).to_dict()
    if args.upper:
        out["upper_divergence"] = upper_divergence(target, model, seed=args.seed).to_dict()
    _emit(pio.dumps(out), args.out)


# -- plan / table -------------------------------------------------------------

PLAN_HEADER = ("regime", "alpha", "s", "n", "budget", "m", "xi", "k", "u")


def _cmd_plan(args) -> None:
    a, s, n, C = args.alpha, args.s, args.n, args.budget
    if C is None and n is None:
        raise ConfigError("plan needs --budget, --n or both")
    rows = []

    def add(regime, m, xi, k, u):
        rows.append({"regime": regime, "alpha": a, "s": s, "n": n, "budget": C, "m": m, "xi": xi, "k": k, "u": u})

    if C is not None:
        p = planner.budget_plan(C, a, s, n)
        add(p.regime, p.m, p.xi, p.k, p.u)
        if n is not None:
            for c in planner.integer_candidates(p, a, s, n):
                add("budget_integer", c["m"], c["xi"], c["k"], c["u"])
    if n is not None:
        p = planner.near_parametric_plan(s, n) if math.isinf(a) else planner.rate_optimal_plan(a, s, n)
        add(p.regime, p.m, p.xi, p.k, p.u)
    config = {"alpha": a, "s": s, "n": n, "budget": C, "v_formula": args.v_formula}
    _emit(pio.csv_text(PLAN_HEADER, rows, pio.meta_block(args.seed, config)), args.out)


TABLE_HEADER = ("k", "m", "approx", "approx_exact", "params", "notes")


def _cmd_table(args) -> None:
    if args.which == 1:
        rows = planner.table_fixed_estimation(args.alpha, args.s, v_formula=args.v_formula, budget=args.budget)
        best, label = planner.argmin_row(rows, "approx"), "smallest approximation error"
    else:
        rows = planner.table_fixed_approx(args.alpha, args.s, args.target, v_formula=args.v_formula)
        best, label = planner.argmin_row(rows, "params"), "fewest parameters"
    out = []
    for r in rows:
        notes = [r.note] if r.note else []
        if r is best:
            notes.append(label)
        out.append({"k": r.k, "m": r.m, "approx": f"{r.approx:.4f}", "approx_exact": r.approx,
                    "params": r.params, "notes": "; ".join(notes)})
    config = {"which": args.which, "alpha": args.alpha, "s": args.s, "target": args.target,
              "budget": args.budget, "v_formula": args.v_formula}
    _emit(pio.csv_text(TABLE_HEADER, out, pio.meta_block(args.seed, config)), args.out)


# -- rate ---------------------------------------------------------------------

def _rate_target(args):
    if args.target:
        return target_from_dict(pio.read_json(args.target))
    params = json.loads(args.params) if args.params else {}
    if not isinstance(params, dict):
        raise ConfigError("--params must be a JSON object")
    return make_target(args.kind, args.alpha, args.s, args.family, **params)


def _cmd_rate(args) -> None:
    target = _rate_target(args)
    res = probe.rate_slope(target, args.ms, args.k, args.n_quad)
    running = probe.slope_so_far(res.rs, res.Ds)
    rows = [{"m": m, "r": r, "D": d, "slope_so_far": sl} for m, r, d, sl in zip(res.ms, res.rs, res.Ds, running)]
    config = {"target": target_to_dict(target), "k": args.k, "ms": res.ms, "n_quad": args.n_quad}
    meta = pio.meta_block(args.seed, config)
    _emit(pio.csv_text(("m", "r", "D", "slope_so_far"), rows, meta), args.out)
    if args.summary:
        pio.write_json(args.summary, {"meta": meta, **res.to_dict()})


# -- experiment ---------------------------------------------------------------

def _cmd_experiment(args) -> None:
    d = _read_config(args.config)
    if args.seed_given:
        d["seed"] = args.seed
    d["threads"] = args.threads
    try:
        cfg = ExperimentConfig.from_dict(d)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    rows, summary = run_rate_experiment(cfg)
    public = {k: v for k, v in cfg.to_dict().items() if k != "threads"}
    meta = pio.meta_block(cfg.seed, public)
    _emit(pio.csv_text(ROW_FIELDS, rows, meta), args.out)
    if args.summary:
        pio.write_json(args.summary, {"meta": meta, "config": public, **summary})


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="polymoe", description="Mixture-of-experts with polynomial GLM experts.")
    p.add_argument("--version", action="version", version=f"polymoe {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_required=False):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=1, help="worker threads (0 = all cores)")
        sp.add_argument("--out", required=out_required, help="output path (default: stdout)")

    f = sub.add_parser("fit", help="fit a model to a dataset CSV")
    f.add_argument("--data", required=True)
    f.add_argument("--config", help="JSON object of fit settings")
    f.add_argument("--family")
    f.add_argument("--m", type=int)
    f.add_argument("--k", type=int)
    f.add_argument("--restarts", type=int)
    f.add_argument("--report", help="write the fit report JSON here")
    common(f, out_required=True)

    k = sub.add_parser("kl", help="divergence between a target and a fitted model")
    k.add_argument("--target", required=True)
    k.add_argument("--model", required=True)
    k.add_argument("--n-mc", type=int, default=20_000)
    k.add_argument("--method", choices=("auto", "truncated_sum", "monte_carlo"), default="auto")
    k.add_argument("--hellinger", action="store_true")
    k.add_argument("--upper", action="store_true", help="also report the upper divergence")
    common(k)

    pl = sub.add_parser("plan", help="optimal number of experts and degree")
    pl.add_argument("--alpha", type=_alpha, required=True)
    pl.add_argument("--s", type=int, required=True)
    pl.add_argument("--n", type=float)
    pl.add_argument("--budget", type=float)
    pl.add_argument("--v-formula", choices=planner.V_FORMULAS, default="ms")
    common(pl)

    t = sub.add_parser("table", help="approximation / parameter-count tables")
    t.add_argument("--which", type=int, choices=(1, 2), required=True)
    t.add_argument("--alpha", type=_alpha, required=True)
    t.add_argument("--s", type=int, required=True)
    t.add_argument("--target", type=float, default=planner.REFERENCE_TARGET)
    t.add_argument("--budget", type=float, default=planner.REFERENCE_BUDGET)
    t.add_argument("--v-formula", choices=planner.V_FORMULAS, default="ms")
    common(t)

    r = sub.add_parser("rate", help="deterministic approximation-rate probe")
    r.add_argument("--target", help="target JSON (overrides --kind)")
    r.add_argument("--kind", default="smooth_sin")
    r.add_argument("--alpha", type=_alpha)
    r.add_argument("--s", type=int, default=1)
    r.add_argument("--family", default="poisson")
    r.add_argument("--params", help="JSON object of target parameters")
    r.add_argument("--k", type=int, default=1)
    r.add_argument("--ms", type=_int_list, default=[2, 4, 8, 16])
    r.add_argument("--n-quad", type=int, default=16)
    r.add_argument("--summary", help="write the summary JSON here")
    common(r)

    e = sub.add_parser("experiment", help="end-to-end convergence sweep")
    e.add_argument("--config", required=True)
    e.add_argument("--summary", help="write the summary JSON here")
    common(e)
    return p


def dispatch(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
        args.seed_given = args.seed is not None
        if args.seed is None:
            args.seed = 0
        args.threads = resolve_threads(args.threads)
        log.info("polymoe %s %s: seed=%d threads=%d", __version__, args.command, args.seed, args.threads)
        COMMANDS[args.command](args)
        return 0
    except (ConfigError, DataError, NumericalError) as exc:
        code = next(c for t, c in EXIT_CODES.items() if isinstance(exc, t))
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")
        return code
    except FileNotFoundError as exc:
        sys.stderr.write(json.dumps({"error": "DataError", "message": f"file not found: {exc.filename}",
                                     "exit_code": 3}) + "\n")
        return 3


COMMANDS = {
    "fit": _cmd_fit,
    "kl": _cmd_kl,
    "plan": _cmd_plan,
    "table": _cmd_table,
    "rate": _cmd_rate,
    "experiment": _cmd_experiment,
}


def main(argv=None) -> None:
    sys.exit(dispatch(argv))


if __name__ == "__main__":
    main()
