"""Command-line entry points.

Subcommands mirror the library: ``simulate``, ``fit-ols``, ``fit-mle``,
``fit-bayes``, ``profile``, ``decompose``, ``price``. Every command
writes its canonical artifacts into ``--out`` (deterministic bytes for
a given input and seed) and prints a rendering chosen by ``--format``
to stdout. Failures print a one-line JSON object to stderr and exit
with 2 for input-side problems and 1 for numerical ones.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
from pathlib import Path

import yaml

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .actuarial import (PricingResult, cell_ledger_rows, load_contract,
                        price, pricing_csv_rows, render_pricing_text,
                        with_premium)
from .data import (PanelSchema, load_rainfall, load_yield_panel,
                   write_rainfall, write_yield_panel)
from .decomposition import (decompose, decomposition_csv_rows,
                            render_decomposition_text)
from .errors import ConfigError, DataError, NumericalError, YieldriskError
from .estimation import (fit_mle, fit_ols, fit_to_dict, profile_zeta,
                         render_fit_text, zeta_csv_rows)
from .gibbs import (ChainConfig, PosteriorDraws, PriorSpec, run_gibbs,
                    summary_csv_rows, draws_csv_rows)
from .hierarchy import HierarchySpec
from .synthetic import (GenerativeConfig, RainfallGenConfig, generate_panel,
                        generate_rainfall)


def _load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        if p.suffix == ".json":
            obj = json.loads(p.read_text())
        elif p.suffix in (".yaml", ".yml"):
            obj = yaml.safe_load(p.read_text())
        elif p.suffix == ".toml":
            obj = tomllib.loads(p.read_text())
        else:
            raise ConfigError(f"unsupported config extension {p.suffix!r}; "
                              "use .json, .yaml, .yml or .toml")
    except (json.JSONDecodeError, yaml.YAMLError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"could not parse {p}: {e}") from e
    if obj is None:
        return {}
    if not isinstance(obj, dict):
        raise ConfigError(f"config root must be a mapping, got {type(obj).__name__}")
    return obj


def _reject_unknown(cfg: dict, allowed, where: str) -> None:
    unknown = sorted(set(cfg) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown {where} config keys: {', '.join(unknown)}; "
                          f"allowed: {', '.join(sorted(allowed))}")


def _jsonable(obj):
    """Recursively convert to JSON-safe values; non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        try:
            return _jsonable(obj.item())
        except (AttributeError, ValueError):
            return str(obj)
    if isinstance(obj, (str, int, bool)) or obj is None:
        return obj
    return str(obj)


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


def _print_csv(rows) -> None:
    w = csv.writer(sys.stdout)
    w.writerows(rows)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _schema_from_config(cfg: dict) -> PanelSchema | None:
    columns = cfg.pop("columns", None)
    allowed = cfg.pop("allowed_crops", None)
    if columns is None and allowed is None:
        return None
    kwargs = {}
    if columns is not None:
        kwargs["columns"] = dict(columns)
    if allowed is not None:
        kwargs["allowed_crops"] = tuple(allowed)
    return PanelSchema(**kwargs)


def _hierarchy_from_config(cfg: dict) -> HierarchySpec:
    levels = cfg.pop("levels", None)
    include_covariates = cfg.pop("include_covariates", True)
    if levels is None:
        return HierarchySpec(include_covariates=bool(include_covariates))
    return HierarchySpec(levels=tuple(levels),
                         include_covariates=bool(include_covariates))


def _cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    kind = cfg.pop("kind", "panel")
    if args.seed is not None:
        cfg["seed"] = args.seed
    out = _out_dir(args)
    if kind == "panel":
        include_effects = bool(cfg.pop("include_effects", False))
        fields = {f.name for f in dataclasses.fields(GenerativeConfig)}
        _reject_unknown(cfg, fields, "simulate")
        for key in ("crops", "crop_mix"):
            if key in cfg and cfg[key] is not None:
                cfg[key] = tuple(cfg[key])
        if "beta" in cfg and cfg["beta"] is not None:
            cfg["beta"] = {c: tuple(v) for c, v in cfg["beta"].items()}
        gen = GenerativeConfig(**cfg)
        records, truth = generate_panel(gen)
        write_yield_panel(out / "panel.csv", records)
        truth_dict = {
            "mu": truth.mu,
            "beta": truth.beta,
            "variances": truth.variances,
            "realized_variances": truth.realized_variances,
            "decomposition": dataclasses.asdict(truth.decomposition),
            "n_obs": truth.n_obs,
            "clipped_rows": truth.clipped_rows,
            "seed": truth.seed,
        }
        if include_effects:
            truth_dict["effects"] = {
                level: {_label_key(lab): v for lab, v in vals.items()}
                for level, vals in truth.effects.items()}
        _write_json(out / "truth.json", truth_dict)
        summary = {"kind": "panel", "n_obs": truth.n_obs,
                   "clipped_rows": truth.clipped_rows,
                   "panel": str(out / "panel.csv"), "truth": str(out / "truth.json")}
    elif kind == "rainfall":
        fields = {f.name for f in dataclasses.fields(RainfallGenConfig)}
        _reject_unknown(cfg, fields, "simulate")
        if "years" in cfg:
            cfg["years"] = tuple(int(v) for v in cfg["years"])
        if "phase_mean" in cfg:
            cfg["phase_mean"] = tuple(float(v) for v in cfg["phase_mean"])
        if "phase_sd" in cfg:
            cfg["phase_sd"] = tuple(float(v) for v in cfg["phase_sd"])
        gen = RainfallGenConfig(**cfg)
        series, truth = generate_rainfall(gen)
        write_rainfall(out / "rainfall.csv", series)
        truth_dict = {
            "totals": {f"{v}|{yr}": list(t) for (v, yr), t in truth.totals.items()},
            "starts": {f"{v}|{yr}": d.isoformat() for (v, yr), d in truth.starts.items()},
            "clipped_cells": truth.clipped_cells,
            "seed": truth.seed,
        }
        _write_json(out / "truth.json", truth_dict)
        summary = {"kind": "rainfall", "n_series": len(series),
                   "rainfall": str(out / "rainfall.csv"),
                   "truth": str(out / "truth.json")}
    else:
        raise ConfigError(f"unknown simulate kind {kind!r}; use 'panel' or 'rainfall'")
    if args.format == "json":
        print(json.dumps(_jsonable(summary), sort_keys=True))
    else:
        for k, v in summary.items():
            print(f"{k}: {v}")
    return 0


def _label_key(label) -> str:
    if isinstance(label, tuple):
        return "|".join(str(x) for x in label)
    return str(label)


def _fit_csv_rows(d: dict) -> list[tuple[str, str, str, str]]:
    rows = [("kind", "name", "estimate", "se")]
    ses = d.get("variance_se", {})
    for name, v in d["variances"].items():
        se = ses.get(name)
        rows.append(("variance", name, repr(float(v)),
                     "" if se is None else repr(float(se))))
    bse = d.get("standard_errors", {})
    for name, v in d["coefficients"].items():
        se = bse.get(name)
        rows.append(("coefficient", name, repr(float(v)),
                     "" if se is None else repr(float(se))))
    return rows


def _emit_fit(args, result) -> int:
    out = _out_dir(args)
    d = fit_to_dict(result)
    _write_json(out / "fit.json", d)
    if args.format == "json":
        print(json.dumps(_jsonable(d), sort_keys=True))
    elif args.format == "csv":
        _print_csv(_fit_csv_rows(d))
    else:
        sys.stdout.write(render_fit_text(result))
    return 0


def _cmd_fit_ols(args) -> int:
    cfg = _load_config(args.config)
    schema = _schema_from_config(cfg)
    include_seasons = bool(cfg.pop("include_seasons", False))
    on_deficient = cfg.pop("on_deficient", "drop")
    spec = _hierarchy_from_config(cfg)
    _reject_unknown(cfg, (), "fit-ols")
    records = load_yield_panel(args.panel, schema)
    result = fit_ols(records, spec, include_seasons=include_seasons,
                     on_deficient=on_deficient)
    return _emit_fit(args, result)


def _cmd_fit_mle(args) -> int:
    cfg = _load_config(args.config)
    schema = _schema_from_config(cfg)
    spec = _hierarchy_from_config(cfg)
    kwargs = {}
    for key, cast in (("em_iterations", int), ("tol", float), ("polish", bool),
                      ("max_polish", int), ("compute_se", bool),
                      ("on_deficient", str)):
        if key in cfg:
            kwargs[key] = cast(cfg.pop(key))
    _reject_unknown(cfg, (), "fit-mle")
    records = load_yield_panel(args.panel, schema)
    result = fit_mle(records, spec, **kwargs)
    return _emit_fit(args, result)


def _bayes_fit_dict(result: PosteriorDraws) -> dict:
    summ = result.summary()
    coeffs = {}
    ses = {}
    for name in result.beta_columns:
        s = summ[f"beta[{name}]"]
        coeffs[name] = s["mean"]
        ses[name] = s["sd"]
    var_draws = result.variance_draws()
    variance_se = {comp: float(v.std(ddof=1)) for comp, v in var_draws.items()}
    variance_rhat = {f"var[{c}]" for c in result.components}
    converged = all(
        result.rhat.get(p, float("nan")) <= 1.1
        for p in result.parameters if p in variance_rhat
        and math.isfinite(result.rhat.get(p, float("nan"))))
    return {
        "method": "bayes",
        "n_obs": result.n_obs,
        "n_params": len(result.parameters),
        "coefficients": coeffs,
        "standard_errors": ses,
        "variances": result.posterior_variances(),
        "variance_se": variance_se,
        "mu": summ["mu"]["mean"],
        "log_likelihood": -0.5 * result.mean_deviance,
        "aic": None,
        "dic": result.dic,
        "p_d": result.p_d,
        "mean_deviance": result.mean_deviance,
        "deviance_at_mean": result.deviance_at_mean,
        "r_squared": None,
        "levels": list(result.levels),
        "converged": bool(converged),
        "iterations": result.config.burn + result.config.keep,
        "em_log_likelihoods": [],
        "boundary": [],
        "unidentified": [],
        "dropped_columns": [],
        "normality_assumed": True,
        "warnings": list(result.warnings),
        "rhat": dict(result.rhat),
        "ess": dict(result.ess),
        "chains": result.config.chains,
        "stored_per_chain": result.config.stored,
        "blups": {level: {_label_key(lab): float(v)
                          for lab, v in zip(result.effect_labels[level], means)}
                  for level, means in result.effect_means.items()},
    }


def _cmd_fit_bayes(args) -> int:
    cfg = _load_config(args.config)
    schema = _schema_from_config(cfg)
    spec = _hierarchy_from_config(cfg)
    prior_keys = {f.name for f in dataclasses.fields(PriorSpec)}
    priors = PriorSpec(**{k: float(cfg.pop(k)) for k in list(cfg) if k in prior_keys})
    chain_keys = {f.name for f in dataclasses.fields(ChainConfig)}
    chain_cfg = {k: cfg.pop(k) for k in list(cfg) if k in chain_keys}
    if args.seed is not None:
        chain_cfg["seed"] = args.seed
    if args.workers is not None:
        chain_cfg["workers"] = args.workers
    config = ChainConfig(**chain_cfg)
    _reject_unknown(cfg, (), "fit-bayes")
    records = load_yield_panel(args.panel, schema)
    result = run_gibbs(records, spec, priors, config)
    out = _out_dir(args)
    d = _bayes_fit_dict(result)
    _write_json(out / "fit.json", d)
    _write_csv(out / "draws.csv", draws_csv_rows(result))
    _write_csv(out / "summary.csv", summary_csv_rows(result))
    if args.format == "json":
        print(json.dumps(_jsonable(d), sort_keys=True))
    elif args.format == "csv":
        _print_csv(summary_csv_rows(result))
    else:
        summ = result.summary()
        print(f"method: bayes   n = {result.n_obs}   chains = {result.config.chains}"
              f"   stored = {result.config.stored} per chain")
        print(f"dic = {result.dic:.4f}   p_d = {result.p_d:.4f}   "
              f"mean deviance = {result.mean_deviance:.4f}")
        print(f"{'parameter':<28}{'mean':>12}{'sd':>12}{'rhat':>8}{'ess':>10}")
        for name in result.parameters:
            s = summ[name]
            rh = s["rhat"]
            es = s["ess"]
            rh_txt = f"{rh:>8.3f}" if math.isfinite(rh) else f"{'--':>8}"
            es_txt = f"{es:>10.0f}" if math.isfinite(es) else f"{'--':>10}"
            print(f"{name:<28}{s['mean']:>12.6f}{s['sd']:>12.6f}{rh_txt}{es_txt}")
        for w in result.warnings:
            print(f"note: {w}")
    return 0


def _cmd_profile(args) -> int:
    cfg = _load_config(args.config)
    schema = _schema_from_config(cfg)
    spec = _hierarchy_from_config(cfg)
    n_points = int(cfg.pop("n_points", 21))
    half_width_se = float(cfg.pop("half_width_se", 4.0))
    kwargs = {}
    for key, cast in (("em_iterations", int), ("tol", float), ("polish", bool),
                      ("max_polish", int)):
        if key in cfg:
            kwargs[key] = cast(cfg.pop(key))
    _reject_unknown(cfg, (), "profile")
    records = load_yield_panel(args.panel, schema)
    result = fit_mle(records, spec, **kwargs)
    profiles = [profile_zeta(result, par, n_points=n_points,
                             half_width_se=half_width_se)
                for par in args.parameter]
    out = _out_dir(args)
    rows = zeta_csv_rows(profiles)
    _write_csv(out / "profile.csv", rows)
    if args.format == "json":
        obj = [{"parameter": p.parameter, "theta_hat": p.theta_hat, "se": p.se,
                "thetas": list(p.thetas), "zetas": list(p.zetas),
                "failed": list(p.failed)} for p in profiles]
        print(json.dumps(_jsonable(obj), sort_keys=True))
    elif args.format == "csv":
        _print_csv(rows)
    else:
        for p in profiles:
            print(f"{p.parameter}: estimate = {p.theta_hat:.6g}, se = {p.se:.6g}, "
                  f"{len(p.thetas)} points, {len(p.failed)} failed")
            if p.zetas:
                print(f"  zeta range [{min(p.zetas):.3f}, {max(p.zetas):.3f}]")
    return 0


def _cmd_decompose(args) -> int:
    p = Path(args.fit)
    if not p.exists():
        raise ConfigError(f"fit file not found: {p}")
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"could not parse {p}: {e}") from e
    if "variances" not in d:
        raise ConfigError(f"{p} has no 'variances' entry; is it a fit artifact?")
    dec = decompose(d["variances"])
    out = _out_dir(args)
    _write_csv(out / "decomposition.csv", decomposition_csv_rows(dec))
    if args.format == "json":
        print(json.dumps(_jsonable(dataclasses.asdict(dec)), sort_keys=True))
    elif args.format == "csv":
        _print_csv(decomposition_csv_rows(dec))
    else:
        sys.stdout.write(render_decomposition_text(dec))
    return 0


def _pricing_to_dict(result: PricingResult) -> dict:
    return {
        "contract": result.contract_label,
        "fair_premium_rs": result.fair_premium_rs,
        "phase_mean_payout": dict(result.phase_mean_payout),
        "phase_payout_frequency": dict(result.phase_payout_frequency),
        "payout_probability": result.payout_probability,
        "years_until_payout": result.years_until_payout,
        "n_cells": result.n_cells,
        "n_series_used": result.n_series_used,
        "commercial_premium_rs": result.commercial_premium_rs,
        "loading_factor": result.loading_factor,
        "excluded": [{"village_id": v, "year": y, "reason": r}
                     for v, y, r in result.excluded],
    }


def _cmd_price(args) -> int:
    contract = load_contract(args.contract)
    if args.premium is not None:
        contract = with_premium(contract, args.premium)
    panel = load_rainfall(args.rainfall)
    result = price(contract, panel)
    out = _out_dir(args)
    _write_csv(out / "pricing.csv", pricing_csv_rows(result))
    _write_csv(out / "cells.csv", cell_ledger_rows(result))
    if args.format == "json":
        print(json.dumps(_jsonable(_pricing_to_dict(result)), sort_keys=True))
    elif args.format == "csv":
        _print_csv(pricing_csv_rows(result))
    else:
        sys.stdout.write(render_pricing_text(result))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="yieldrisk",
        description="Nested crop-yield variance models and monsoon index "
                    "insurance pricing.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML, JSON or TOML options file")
    common.add_argument("--out", default=".", help="directory for artifacts")
    common.add_argument("--format", choices=("text", "csv", "json"),
                        default="text", help="stdout rendering")
    common.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    common.add_argument("--workers", type=int, default=None,
                        help="parallel workers where supported")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("simulate", parents=[common],
                       help="generate a synthetic panel or rainfall series")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit-ols", parents=[common],
                       help="pooled least-squares baseline")
    p.add_argument("--panel", required=True, help="yield panel CSV")
    p.set_defaults(func=_cmd_fit_ols)

    p = sub.add_parser("fit-mle", parents=[common],
                       help="maximum likelihood for the nested model")
    p.add_argument("--panel", required=True, help="yield panel CSV")
    p.set_defaults(func=_cmd_fit_mle)

    p = sub.add_parser("fit-bayes", parents=[common],
                       help="Gibbs sampling for the nested model")
    p.add_argument("--panel", required=True, help="yield panel CSV")
    p.set_defaults(func=_cmd_fit_bayes)

    p = sub.add_parser("profile", parents=[common],
                       help="signed-root likelihood profiles")
    p.add_argument("--panel", required=True, help="yield panel CSV")
    p.add_argument("--parameter", action="append", required=True,
                   help="parameter id, e.g. var[parcel] or beta[rice:labor]; "
                        "repeatable")
    p.set_defaults(func=_cmd_profile)

    p = sub.add_parser("decompose", parents=[common],
                       help="variance decomposition of a fit artifact")
    p.add_argument("--fit", required=True, help="fit.json from any fit command")
    p.set_defaults(func=_cmd_decompose)

    p = sub.add_parser("price", parents=[common],
                       help="price an index insurance contract on rainfall")
    p.add_argument("--rainfall", required=True, help="daily rainfall CSV")
    p.add_argument("--contract", required=True, help="contract JSON or TOML")
    p.add_argument("--premium", type=float, default=None,
                   help="commercial premium for the loading factor")
    p.set_defaults(func=_cmd_price)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except DataError as e:
        _emit_error(e)
        return 2
    except NumericalError as e:
        _emit_error(e)
        return 1
    except YieldriskError as e:
        _emit_error(e)
        return 1


def _emit_error(e: YieldriskError) -> None:
    payload = {"error": type(e).__name__, "message": str(e)}
    for attr in ("lines", "columns", "missing_dates", "iteration", "parameter"):
        value = getattr(e, attr, None)
        if value is None or value == () or value == "" or value == -1:
            continue
        if attr == "missing_dates":
            value = [d.isoformat() if hasattr(d, "isoformat") else str(d)
                     for d in value]
        payload[attr] = value
    print(json.dumps(_jsonable(payload), sort_keys=True), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
