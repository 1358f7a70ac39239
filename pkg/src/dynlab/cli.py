"""Command-line front end: ``dynlab <command> --config <path> [--out <dir>] [--seed-offset <n>]``.

Exit status is 0 when every verdict written by the command passes, 1 when some
verdict fails, 2 for config errors and 3 for runtime failures (divergence,
ensemble failure). Runtime failures leave partial artifacts plus a ``.failed``
marker in the output directory.
"""

import argparse
import csv
import json
import math
import os
import sys
import warnings

import numpy as np

from .config import load_config
from .diagnostics import (compute_metrics, energy_monotonicity, energy_series,
                          fit_power_law, fit_rate, metric_invariants, run_ensemble)
from .dynamics import (Variant, savd_image_schedule, sfogda_image_parameters,
                       validate_operator_assumptions, validate_shbf_assumption)
from .errors import ConfigError, DynlabError, InvalidInputError
from .problems import verify_problem
from .rescaling import check_equivalence, image_of, refinement_study
from .sde import integrate_em, integrate_rk4, sample_brownian, uniform_grid, zero_path

COMMANDS = ("validate", "simulate", "ensemble", "rates", "equivalence")


def _clean(obj):
    """JSON-safe copy: non-finite floats become strings, numpy scalars plain."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, sort_keys=True, indent=2)
        fh.write("\n")


def _all_pass(verdicts):
    return all(v.get("pass", False) for v in verdicts)


# ---------------------------------------------------------------------------
# commands

def cmd_validate(cfg, out, seed_offset):
    problem = cfg.build_problem()
    spec = cfg.build_spec(problem)
    v = cfg.validate
    verdicts = [verify_problem(problem, v["samples"], v["radius"], v["seed"]).to_dict()]
    if spec.variant == Variant.SHBF:
        verdicts.append(validate_shbf_assumption(spec.lam, spec.b).to_dict())
    elif spec.variant == Variant.SHBFOP_ALT:
        verdicts.append(validate_operator_assumptions(spec.lam, spec.mu, spec.gamma).to_dict())
    elif spec.variant == Variant.SAVD:
        rep = validate_shbf_assumption(1.0, savd_image_schedule(spec.alpha, spec.t_start))
        verdicts.append({**rep.to_dict(), "name": "savd_image_assumption"})
    else:
        lam, mu, gamma = sfogda_image_parameters(spec.alpha, spec.beta, spec.t_start)
        rep = validate_operator_assumptions(lam, mu, gamma)
        verdicts.append({**rep.to_dict(), "name": "sfogda_image_assumptions"})
    if not spec.diffusion.is_zero:
        weight = 2.0 if spec.variant.vanishing_damping else 0.0
        verdicts.append({"name": "diffusion_square_integrable", "weight_power": weight,
                         "pass": spec.diffusion.weighted_square_integrable(weight)})
    write_json(os.path.join(out, "validate.json"),
               {"command": "validate", "verdicts": verdicts, "warnings": list(cfg.warnings)})
    return verdicts


def _fits_for(cfg, series, mean_source=None):
    out = []
    for f in cfg.fits:
        src = mean_source if (f["statistic"] == "mean" and mean_source is not None) else series
        out.append(fit_rate(src, f["metric"], f.get("window"), f["target"],
                            f["tolerance"]).to_dict())
    return out


def cmd_simulate(cfg, out, seed_offset):
    spec = cfg.build_spec()
    integ = cfg.integrator
    grid = uniform_grid(spec.t_start, spec.horizon, integ["step"])
    seed = cfg.seeds["base"] + seed_offset
    if integ["scheme"] == "rk4":
        traj = integrate_rk4(spec, grid, integ["record_every"])
    else:
        path = zero_path(grid, spec.dim) if spec.deterministic else \
            sample_brownian(seed, grid, spec.dim)
        traj = integrate_em(spec, path, integ["record_every"])
    traj.to_csv(os.path.join(out, "trajectory.csv"))
    series = compute_metrics(traj)
    series.to_csv(os.path.join(out, "metrics.csv"))
    verdicts = [metric_invariants(series)]
    if spec.deterministic and spec.variant in (Variant.SHBF, Variant.SHBFOP_ALT):
        verdicts.append(energy_monotonicity(energy_series(traj)))
    fits = _fits_for(cfg, series)
    verdicts += fits
    write_json(os.path.join(out, "simulate.json"),
               {"command": "simulate", "seed": seed, "scheme": integ["scheme"],
                "verdicts": verdicts, "warnings": list(cfg.warnings)})
    return verdicts


def cmd_ensemble(cfg, out, seed_offset):
    spec = cfg.build_spec()
    integ = cfg.integrator
    seeds = cfg.seeds
    stats = run_ensemble(spec, seeds["n_paths"], seeds["base"] + seed_offset, integ["step"],
                         integ["record_every"])
    stats.to_csv(os.path.join(out, "ensemble.csv"))
    fits = _fits_for(cfg, stats.first_path, stats)
    verdicts = [stats.invariants] + fits
    write_json(os.path.join(out, "ratefit.json"),
               {"command": "ensemble", "fits": fits, "invariants": stats.invariants,
                "ensemble": stats.summary(), "warnings": list(cfg.warnings)})
    return verdicts


def read_metric_table(path):
    """Metric columns from ``metrics.csv`` (wide) or ``ensemble.csv`` (long)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[:2] == ["t", "metric"]:
        grids, vals = {}, {}
        for r in body:
            grids.setdefault(r[1], []).append(float(r[0]))
            vals.setdefault(r[1], []).append(float(r[2]))
        return {k: (np.array(grids[k]), np.array(vals[k])) for k in vals}
    data = np.array(body, dtype=float).reshape(len(body), len(header))
    return {name: (data[:, 0], data[:, i]) for i, name in enumerate(header) if i > 0}


def cmd_rates(cfg, out, seed_offset):
    src = None
    for name in ("ensemble.csv", "metrics.csv"):
        if os.path.exists(os.path.join(out, name)):
            src = os.path.join(out, name)
            break
    if src is None:
        raise InvalidInputError(f"no ensemble.csv or metrics.csv in {out}")
    table = read_metric_table(src)
    fits = []
    for f in cfg.fits:
        if f["metric"] not in table:
            raise ConfigError([(".fit", f"metric {f['metric']!r} not found in {src}")])
        t, v = table[f["metric"]]
        fits.append(fit_power_law(t, v, f.get("window"), f["target"], f["tolerance"],
                                  f["metric"]).to_dict())
    write_json(os.path.join(out, "ratefit.json"),
               {"command": "rates", "source": os.path.basename(src), "fits": fits})
    return fits


def cmd_equivalence(cfg, out, seed_offset):
    spec_s = cfg.build_spec()
    eq = cfg.equivalence
    spec_t, tm = image_of(spec_s, eq["t0"])
    grid = uniform_grid(spec_s.t_start, spec_s.horizon, cfg.integrator["step"])
    if spec_s.deterministic:
        rep = check_equivalence(spec_t, spec_s, tm, zero_path(grid, spec_s.dim))
        verdict = {"name": "deterministic_equivalence", "tolerance": eq["tolerance"],
                   "sup_pos_err": rep.sup_pos_err,
                   "pass": rep.sup_pos_err <= eq["tolerance"]}
    else:
        path = sample_brownian(cfg.seeds["base"] + seed_offset, grid, spec_s.dim)
        rep = refinement_study(spec_t, spec_s, tm, path, eq["levels"], eq["min_slope"])
        verdict = {"name": "stochastic_refinement", **rep.refinement}
    rep.to_csv(os.path.join(out, "equivalence_errors.csv"))
    write_json(os.path.join(out, "equivalence.json"),
               {**rep.to_dict(), "verdicts": [verdict], "warnings": list(cfg.warnings)})
    return [verdict]


HANDLERS = {"validate": cmd_validate, "simulate": cmd_simulate, "ensemble": cmd_ensemble,
            "rates": cmd_rates, "equivalence": cmd_equivalence}


def run_experiment(config, command, out_dir, seed_offset=0):
    """Run one command; returns the exit status."""
    os.makedirs(out_dir, exist_ok=True)
    marker = os.path.join(out_dir, ".failed")
    if os.path.exists(marker):
        os.remove(marker)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            verdicts = HANDLERS[command](config, out_dir, seed_offset)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
    except DynlabError as exc:
        if isinstance(exc, ConfigError):
            print(str(exc), file=sys.stderr)
            return 2
        with open(marker, "w") as fh:
            fh.write(f"{type(exc).__name__}: {exc}\n")
        print(f"error: {exc}", file=sys.stderr)
        return 3
    for w in config.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0 if _all_pass(verdicts) else 1


def build_parser():
    ap = argparse.ArgumentParser(prog="dynlab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="path to a JSON experiment config")
    ap.add_argument("--out", default=".", help="output directory (default: .)")
    ap.add_argument("--seed-offset", type=int, default=0,
                    help="added to seeds.base for every stochastic run")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    return run_experiment(cfg, args.command, args.out, args.seed_offset)


if __name__ == "__main__":
    sys.exit(main())
