"""Batch command line: ``calibrate``, ``simulate``, ``compare``, ``histogram``.

All commands read a JSON manifest; relative paths in it are resolved
against the manifest's directory. Command-line flags override manifest
values. Exit status is 0 on success, 2 for input problems and 3 for
numerical failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .default_model import FactorModel, RegionFactorModel
from .exceptions import CreditLossError, InputValidationError, NumericalError
from .io import (
    dump_losses,
    file_provenance,
    read_default_records,
    read_factor_history,
    read_firm_params,
    read_json,
    read_lgd_history,
    write_json,
)
from .model_a import ModelACalibration, ModelALGD
from .model_b import ModelBCalibration, ModelBLGD
from .portfolio import load_portfolio
from .simulation import (
    MODES,
    SimulationConfig,
    analytic_expected_loss,
    compare_models,
    comparison_table,
    loss_statistics,
    potential_loss_breakdown,
    run_simulation,
)
from .valuation import load_cashflows, load_curves, resolve_exposures

log = logging.getLogger("creditloss")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
INPUT_KEYS = ("portfolio", "factor_history", "lgd_history", "default_records",
              "curves", "cashflows", "firm_params")
BUNDLES = {"factor": "factor_model.json", "model_a": "model_a.json", "model_b": "model_b.json"}


@dataclass
class RunManifest:
    inputs: dict
    config: SimulationConfig
    output: str
    bundles: str
    currency: str = None
    default_tau: float = 0.25
    raw_paths: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path, overrides=None):
        overrides = overrides or {}
        if path is not None:
            try:
                data = read_json(path)
            except (OSError, json.JSONDecodeError) as exc:
                raise InputValidationError(f"cannot read manifest: {exc}", path) from None
            base = os.path.dirname(os.path.abspath(path))
        else:
            data, base = {}, os.getcwd()

        def resolve(p):
            return p if p is None or os.path.isabs(p) else os.path.join(base, p)

        inputs, raw = {}, {}
        for key in INPUT_KEYS:
            if data.get(key):
                raw[key] = data[key]
                inputs[key] = resolve(data[key])
                if not os.path.exists(inputs[key]):
                    raise InputValidationError(f"{key} file not found: {data[key]}", path)
        cfg = dict(data.get("config", {}))
        cfg.update({k: v for k, v in overrides.items() if v is not None and k != "out"})
        try:
            config = SimulationConfig(**cfg)
        except (TypeError, ValueError) as exc:
            raise InputValidationError(f"invalid config: {exc}", path) from None
        manifest_output = resolve(data.get("output", "out"))
        output = overrides.get("out") or manifest_output
        # bundles stay where the manifest puts them so --out only moves reports
        bundles = resolve(data["bundles"]) if data.get("bundles") else manifest_output
        return cls(inputs, config, output, bundles, data.get("currency"),
                   float(data.get("default_tau", 0.25)), raw)

    def require(self, key):
        if key not in self.inputs:
            raise InputValidationError(f"manifest has no {key!r} entry")
        return self.inputs[key]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_calibrate(manifest: RunManifest):
    os.makedirs(manifest.bundles, exist_ok=True)
    history = read_factor_history(manifest.require("factor_history"))
    firm = {"tau": {}, "mu_drift": {}, "log_equity": {}}
    if "firm_params" in manifest.inputs:
        firm = read_firm_params(manifest.inputs["firm_params"])
    est = RegionFactorModel(default_tau=manifest.default_tau).fit(history)
    model = est.to_factor_model(**firm)
    prov = _provenance(manifest, ("factor_history", "firm_params"))
    write_json(os.path.join(manifest.bundles, BUNDLES["factor"]),
               {"provenance": prov, "model": model.to_dict()})

    if "lgd_history" in manifest.inputs:
        lgd = read_lgd_history(manifest.inputs["lgd_history"])
        cal_a = ModelALGD().fit(lgd, history).calibration_
    else:
        log.warning("no LGD history: Model A bundle marked incomplete")
        cal_a = ModelACalibration.incomplete()
    write_json(os.path.join(manifest.bundles, BUNDLES["model_a"]),
               {"provenance": _provenance(manifest, ("lgd_history", "factor_history")),
                "model": cal_a.to_dict()})

    if "default_records" in manifest.inputs:
        recs = read_default_records(manifest.inputs["default_records"])
        cal_b = ModelBLGD().fit(recs).calibration_
    else:
        log.warning("no default records: Model B bundle marked incomplete")
        cal_b = ModelBCalibration.incomplete()
    write_json(os.path.join(manifest.bundles, BUNDLES["model_b"]),
               {"provenance": _provenance(manifest, ("default_records",)),
                "model": cal_b.to_dict()})
    return {"factor": model, "model_a": cal_a, "model_b": cal_b}


def _provenance(manifest, keys):
    inputs = {k: file_provenance(manifest.inputs[k], manifest.raw_paths[k])
              for k in keys if k in manifest.inputs}
    return {"inputs": inputs, "package_version": __version__}


def _load_portfolio(manifest):
    has_flows = "cashflows" in manifest.inputs
    portfolio = load_portfolio(manifest.require("portfolio"), currency=manifest.currency,
                               allow_missing_exposure=has_flows)
    if has_flows:
        curves = load_curves(manifest.require("curves"))
        flows = load_cashflows(manifest.inputs["cashflows"])
        portfolio = portfolio.with_exposures(resolve_exposures(portfolio, flows, curves))
    missing = [i.id for i in portfolio if not np.isfinite(i.exposure)]
    if missing:
        raise InputValidationError(f"no exposure for instruments {missing[:5]}",
                                   manifest.inputs["portfolio"])
    return portfolio


def _load_bundles(manifest, modes):
    def load(name, cls):
        path = os.path.join(manifest.bundles, BUNDLES[name])
        if not os.path.exists(path):
            raise InputValidationError(f"missing calibration bundle {BUNDLES[name]}; run calibrate",
                                       manifest.bundles)
        return cls.from_dict(read_json(path)["model"])

    factor = load("factor", FactorModel)
    cal_a = load("model_a", ModelACalibration) if "model_a" in modes else None
    cal_b = load("model_b", ModelBCalibration) if "model_b" in modes else None
    return factor, cal_a, cal_b


def _write_breakdowns(portfolio, outdir):
    for dim in ("rating", "industry", "region"):
        rows = potential_loss_breakdown(portfolio, dim)
        with open(os.path.join(outdir, f"breakdown_{dim}.csv"), "w", encoding="utf-8",
                  newline="\n") as fh:
            fh.write(f"{dim},expected_potential_loss,currency\n")
            for key, val in rows.items():
                fh.write(f"{key},{val!r},{portfolio.currency}\n")


def cmd_simulate(manifest: RunManifest, dump=False):
    cfg = manifest.config
    portfolio = _load_portfolio(manifest)
    factor, cal_a, cal_b = _load_bundles(manifest, (cfg.lgd_mode,))
    losses = run_simulation(portfolio, factor, cal_a, cal_b, cfg)
    if not np.all(np.isfinite(losses)):
        raise NumericalError("simulation produced non-finite losses")
    stats = loss_statistics(losses, cfg.quantile_levels, cfg.master_seed, cfg.lgd_mode)
    expo = portfolio.exposure
    stats.extra.update({
        "currency": portfolio.currency,
        "horizon_periods": cfg.horizon_periods,
        "analytic_el": analytic_expected_loss(portfolio, cfg.horizon_periods),
        "exposure_total_signed": float(expo.sum()),
        "exposure_total_positive": float(np.clip(expo, 0.0, None).sum()),
    })
    os.makedirs(manifest.output, exist_ok=True)
    write_json(os.path.join(manifest.output, "results.json"), stats.to_dict())
    _write_breakdowns(portfolio, manifest.output)
    if dump:
        dump_losses(os.path.join(manifest.output, "losses.bin"), losses)
    return stats


def cmd_compare(manifest: RunManifest):
    cfg = manifest.config
    portfolio = _load_portfolio(manifest)
    factor, cal_a, cal_b = _load_bundles(manifest, MODES)
    stats = compare_models(portfolio, factor, cal_a, cal_b, cfg)
    os.makedirs(manifest.output, exist_ok=True)
    table = comparison_table(stats)
    with open(os.path.join(manifest.output, "comparison.csv"), "w", encoding="utf-8",
              newline="\n") as fh:
        cols = list(table.columns)
        fh.write(",".join(["Model"] + cols) + "\n")
        for label, row in table.iterrows():
            fh.write(",".join([label] + [repr(float(row[c])) for c in cols]) + "\n")
    write_json(os.path.join(manifest.output, "comparison.json"),
               {m: dict(s.to_dict(), currency=portfolio.currency) for m, s in stats.items()})
    return stats


def cmd_histogram(manifest: RunManifest):
    portfolio = _load_portfolio(manifest)
    os.makedirs(manifest.output, exist_ok=True)
    _write_breakdowns(portfolio, manifest.output)
    return {dim: potential_loss_breakdown(portfolio, dim) for dim in ("rating", "industry", "region")}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _levels(text):
    return tuple(float(x) for x in text.split(","))


def build_parser():
    p = argparse.ArgumentParser(prog="creditloss", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("calibrate", "simulate", "compare", "histogram"):
        s = sub.add_parser(name)
        s.add_argument("--manifest", required=True)
        s.add_argument("--out", help="output directory (overrides manifest)")
        s.add_argument("--seed", type=int, dest="master_seed")
        s.add_argument("--scenarios", type=int)
        s.add_argument("--mode", choices=MODES, dest="lgd_mode")
        s.add_argument("--threads", type=int)
        s.add_argument("--batch-size", type=int, dest="batch_size")
        s.add_argument("--horizon", type=int, dest="horizon_periods")
        s.add_argument("--quantile-levels", type=_levels, dest="quantile_levels",
                       help="comma separated, e.g. 0.9,0.99")
        s.add_argument("--dump-losses", action="store_true",
                       help="write losses.bin (little-endian float64)")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", RuntimeWarning)
    overrides = {k: getattr(args, k) for k in (
        "master_seed", "scenarios", "lgd_mode", "threads", "batch_size",
        "horizon_periods", "quantile_levels", "out")}
    try:
        manifest = RunManifest.load(args.manifest, overrides)
        if args.command == "calibrate":
            cmd_calibrate(manifest)
        elif args.command == "simulate":
            cmd_simulate(manifest, dump=args.dump_losses)
        elif args.command == "compare":
            cmd_compare(manifest)
        else:
            cmd_histogram(manifest)
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CreditLossError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
