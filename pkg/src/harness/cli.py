"""
Command-line entry point.

    python -m src.harness.cli <gge|hmf|bounds|sweep|verify|oracle> [options]

Exit codes: 0 ok, 1 invariant or check failure, 2 configuration error.
Results go to stdout, or to --out; logs go to stderr.

--tol-scale is applied once per command: to the residual limits for verify,
oracle and hmf, and to the tolerances for gge, bounds and sweep.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List

import pandas as pd

from src.common.errors import ConfigError, ToolkitError
from src.common.log import configure_logging
from src.common.settings import Settings, load_settings
from src.ensembles.bounds import check_violations, evaluate_spec
from src.ensembles.specs import append_run_log, ensemble_spec_from_payload
from src.gge.gibbs import (
    build_gge,
    charge_covariance,
    charge_set_from_payload,
    equilibrium_entropy,
    legendre_check,
    mean_charge,
    mean_charge_from_partition,
    state_family,
)
from src.meanforce.composite import CompositeModel, composite_model_from_payload, hmf
from src.metrology.measures import qfi_commuting_closed_form, qfi_spectral
from src.opalgebra.operators import operator_to_payload

from .models import build_model
from .oracles import ORACLE_LIMITS, failed_oracles, hmf_round_trip_residual, oracle_residuals
from .sweep import load_sweep_config, records_to_frame, records_to_json, run_sweep
from .verify import CHECKS, MUTATIONS, verify_suite

logger = logging.getLogger(__name__)


# -----------------------------
# Input / output helpers
# -----------------------------


def _read_config(path: str | None) -> Dict[str, Any]:
    if not path:
        raise ConfigError("--config is required for this command")
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read config '{path}': {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"Config '{path}' must hold a JSON object")
    return raw


def _load_model(raw: Dict[str, Any]) -> CompositeModel:
    """Either {"kind": ..., "params": {...}} for a built-in model or an explicit operator payload."""
    if "kind" in raw:
        params = raw.get("params", {})
        if not isinstance(params, dict):
            raise ConfigError("model params must be a JSON object")
        return build_model(str(raw["kind"]), params)
    return composite_model_from_payload(raw)


def _beta(args: argparse.Namespace, raw: Dict[str, Any]) -> float:
    beta = args.beta if args.beta is not None else raw.get("beta")
    if beta is None:
        raise ConfigError("beta is required (--beta or a 'beta' key in the config)")
    try:
        return float(beta)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"beta must be a number, got {beta!r}") from e


def _emit(payload: Any, args: argparse.Namespace, frame: pd.DataFrame | None = None) -> None:
    if args.format == "csv":
        df = frame if frame is not None else pd.json_normalize(payload)
        text = df.to_csv(index=False)
    else:
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
        logger.info("wrote %s", out)
    else:
        sys.stdout.write(text)


# -----------------------------
# Commands
# -----------------------------


def cmd_gge(args: argparse.Namespace, settings: Settings) -> int:
    tol = settings.tolerances
    cs = charge_set_from_payload(_read_config(args.config), tol)
    state = build_gge(cs)
    n = len(cs)
    fam = state_family(cs)
    legendre = legendre_check(state, settings.k_boltzmann, args.seed, tol)
    payload = {
        "lambdas": list(cs.lambdas),
        "log_z": state.log_z,
        "means": [mean_charge(state, i) for i in range(n)],
        "means_from_partition": [mean_charge_from_partition(cs, i, tol) for i in range(n)],
        "covariance": [[charge_covariance(state, i, j) for j in range(n)] for i in range(n)],
        "entropy": equilibrium_entropy(state, settings.k_boltzmann, tol),
        "fisher_closed_form": [qfi_commuting_closed_form(state, i) for i in range(n)],
        "fisher_spectral": [qfi_spectral(fam, i, cs.lambdas, tol=tol).value for i in range(n)],
        "legendre": legendre.model_dump(),
    }
    _emit(payload, args)
    return 0


def cmd_hmf(args: argparse.Namespace, settings: Settings) -> int:
    raw = _read_config(args.config)
    model = _load_model(raw.get("model", raw))
    beta = _beta(args, raw)
    residual = hmf_round_trip_residual(model, beta)
    payload = {
        "model": model.name,
        "beta": beta,
        "g": model.g,
        "hmf": operator_to_payload(hmf(model, beta)).model_dump(),
        "round_trip_residual": residual,
    }
    _emit(payload, args)
    return 0 if residual <= ORACLE_LIMITS["hmf_round_trip"] * settings.tol_scale else 1


def cmd_bounds(args: argparse.Namespace, settings: Settings) -> int:
    spec = ensemble_spec_from_payload(_read_config(args.config))
    reports = evaluate_spec(spec, strict=args.strict, tol=settings.tolerances)
    violations: List[str] = []
    for rep in reports:
        violations.extend(rep.invariant_violations(settings.tolerances))
        violations.extend(check_violations(rep))
        if args.run_log:
            append_run_log(args.run_log, rep)
    payload = [rep.model_dump(mode="json") for rep in reports]
    frame = pd.json_normalize(payload) if args.format == "csv" else None
    _emit(payload, args, frame)
    for v in violations:
        logger.error("invariant violated: %s", v)
    return 1 if violations else 0


def cmd_sweep(args: argparse.Namespace, settings: Settings) -> int:
    cfg = load_sweep_config(args.config)
    if settings.tol_scale != 1.0:
        cfg = cfg.model_copy(update={"tol_scale": cfg.tol_scale * settings.tol_scale})
    records = run_sweep(cfg, jobs=settings.jobs, timings=args.timings)
    if args.out is None and cfg.output:
        args.out = cfg.output
    if args.format is None:
        args.format = cfg.format

    errors = [r for r in records if r.error]
    if errors:
        logger.warning("%d of %d sweep points failed", len(errors), len(records))
    bad = [
        (r.index, v)
        for r in records
        for rep in r.reports
        for v in rep.invariant_violations(cfg.resolved_tolerances())
    ]
    if args.format == "csv":
        _emit(None, args, records_to_frame(records))
    else:
        _emit(json.loads(records_to_json(records)), args)
    for index, v in bad:
        logger.error("point %d: %s", index, v)
    return 1 if bad else 0


def cmd_verify(args: argparse.Namespace, settings: Settings) -> int:
    summary = verify_suite(
        seed=args.seed,
        trials=args.trials,
        mutations=args.mutate or (),
        only=args.check or None,
        tol_scale=settings.tol_scale,
    )
    payload = summary.model_dump(mode="json")
    payload["ok"] = summary.ok
    rows = [c.model_dump(exclude={"errors"}) for c in summary.checks.values()]
    _emit(payload, args, pd.DataFrame(rows) if args.format == "csv" else None)
    return 0 if summary.ok else 1


def cmd_oracle(args: argparse.Namespace, settings: Settings) -> int:
    raw = _read_config(args.config)
    model = _load_model(raw.get("model", raw))
    beta = _beta(args, raw)
    residuals = oracle_residuals(model, beta)
    failed = failed_oracles(residuals, settings.tol_scale)
    payload = {
        "model": model.name,
        "beta": beta,
        "g": model.g,
        "residuals": residuals,
        "limits": {k: v * settings.tol_scale for k, v in ORACLE_LIMITS.items()},
        "failed": sorted(failed),
    }
    _emit(payload, args)
    return 1 if failed else 0


COMMANDS = {
    "gge": cmd_gge,
    "hmf": cmd_hmf,
    "bounds": cmd_bounds,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
    "oracle": cmd_oracle,
}


# -----------------------------
# Parser
# -----------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="Path to the JSON input for the command.")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=None, help="Write the result here instead of stdout.")
    common.add_argument("--format", choices=("json", "csv"), default=None)
    common.add_argument("--tol-scale", type=float, default=1.0, help="Multiply acceptance tolerances.")
    common.add_argument("--log-level", default=None, help="Overrides GGE_BOUNDS_LOG_LEVEL.")
    common.add_argument("--jobs", type=int, default=None, help="Parallel sweep workers (GGE_BOUNDS_JOBS wins).")

    ap = argparse.ArgumentParser(prog="gge-bounds", description=__doc__.splitlines()[1].strip())
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("gge", parents=[common], help="GGE state, means, entropy and Legendre check.")

    p_hmf = sub.add_parser("hmf", parents=[common], help="Hamiltonian of mean force for a model.")
    p_hmf.add_argument("--beta", type=float, default=None)

    p_bounds = sub.add_parser("bounds", parents=[common], help="Uncertainty reports for an ensemble spec.")
    p_bounds.add_argument("--strict", action="store_true", help="Raise on infinite bounds and broken expansions.")
    p_bounds.add_argument("--run-log", default=None, help="Append each report to this JSONL file.")

    p_sweep = sub.add_parser("sweep", parents=[common], help="Run a (beta, g, mu) grid.")
    p_sweep.add_argument("--timings", action="store_true", help="Record wall time per point.")

    p_verify = sub.add_parser("verify", parents=[common], help="Seeded verification suite.")
    p_verify.add_argument("--trials", type=int, default=100)
    p_verify.add_argument("--mutate", action="append", choices=sorted(MUTATIONS), default=None)
    p_verify.add_argument("--check", action="append", choices=sorted(CHECKS), default=None)

    p_oracle = sub.add_parser("oracle", parents=[common], help="Dual-path residuals for one model point.")
    p_oracle.add_argument("--beta", type=float, default=None)
    return ap


def main(argv: List[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        settings = load_settings(jobs=args.jobs, tol_scale=args.tol_scale)
        if args.command != "sweep" and args.format is None:
            args.format = "json"
        return COMMANDS[args.command](args, settings)
    except ConfigError as e:
        logger.error("configuration error: %s", e)
        return 2
    except ToolkitError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
