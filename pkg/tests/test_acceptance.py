"""Acceptance criteria, one test per criterion.

Each case runner returns verdicts, the metric series it produced and its
serialized artifacts. Results are cached so the invariant sweep reuses them;
the reproducibility check reruns every case from scratch and compares bytes.
A PASS/FAIL line per criterion is printed in the terminal summary.
"""

import os
import tempfile
import time

import numpy as np
import pytest

from dynlab import (DiffusionSchedule, ScalarSchedule, build_savd, build_sfogda_alt,
                    build_shbf, build_shbfop_alt, check_equivalence, compute_metrics, fit_rate,
                    image_of, integrate_em, integrate_rk4, make_bilinear_saddle,
                    make_quadratic, make_rotation, martingale_mean_check, refinement_study,
                    run_ensemble, sample_brownian, uniform_grid, zero_path)
from dynlab.cli import write_json
from dynlab.diagnostics import energy_monotonicity, energy_series, metric_invariants
from dynlab.dynamics import (savd_image_schedule, sfogda_image_parameters,
                             validate_operator_assumptions, validate_shbf_assumption)

ZERO = DiffusionSchedule.zero()


def _power(c, r, t0):
    return ScalarSchedule.power_law(c, r, t0)


def _artifacts(writers):
    """Run ``{name: writer(path)}`` in a scratch directory and return the bytes."""
    out = {}
    with tempfile.TemporaryDirectory() as d:
        for name, write in writers.items():
            p = os.path.join(d, name)
            write(p)
            with open(p, "rb") as fh:
                out[name] = fh.read()
    return out


def _json_writer(obj):
    return lambda p: write_json(p, obj)


# ---------------------------------------------------------------------------
# shared setups

def shbf_rate_spec():
    """Heavy ball with b = t^2 from t0 = 4 and noise t^-1.1 on a flat quadratic.

    The small spectrum keeps b(t) L below the explicit-step stability bound at
    the end of the horizon with step 5e-4.
    """
    return build_shbf(1.0, _power(1.0, 2.0, 4.0), DiffusionSchedule(_power(1.0, -1.1, 4.0)),
                      make_quadratic([0.005, 0.01]), initial=([1.0, 1.0], [0.0, 0.0]),
                      t_start=4.0, horizon=196.0)


SHBF_STEP = 5e-4
SHBF_RECORD = 20


def vanishing_spec(variant):
    sigma = DiffusionSchedule(_power(1.0, -1.6, 1.0))
    init = ([1.0, 1.0], [0.0, 0.0])
    if variant == "SAVD":
        return build_savd(4.0, sigma, make_quadratic([1.0, 2.0]), initial=init, s_start=1.0,
                          horizon=99.0)
    return build_sfogda_alt(4.0, 1.0, sigma, make_rotation(), initial=init, s_start=1.0,
                            horizon=99.0)


# ---------------------------------------------------------------------------
# case runners

def case_1():
    q = make_quadratic([1.0, 3.0], [1.0, -2.0])
    saddle = make_bilinear_saddle([[1.0, 2.0], [0.5, -1.0]])
    specs = {
        "SHBF": build_shbf(1.0, _power(1.0, 1.0, 1.0), ZERO, q,
                           initial=(q.minimizer, [0.0, 0.0]), t_start=1.0, horizon=10.0),
        "SAVD": build_savd(4.0, ZERO, q, initial=(q.minimizer, [0.0, 0.0]), s_start=1.0,
                           horizon=10.0),
        "SHBFOP_ALT": build_shbfop_alt(2.0, ScalarSchedule.constant(1.0),
                                       ScalarSchedule.constant(1.0), ZERO, saddle,
                                       initial=(saddle.zero, np.zeros(4)), horizon=10.0),
        "SFOGDA_ALT": build_sfogda_alt(4.0, 1.0, ZERO, make_rotation(),
                                       initial=([0.0, 0.0], [0.0, 0.0]), s_start=1.0,
                                       horizon=10.0),
    }
    verdicts, series, writers = [], [], {}
    for name, spec in specs.items():
        grid = uniform_grid(spec.t_start, spec.horizon, 1e-4)
        start = time.perf_counter()
        traj = integrate_em(spec, zero_path(grid, spec.dim))
        elapsed = time.perf_counter() - start
        scale = max(1.0, float(np.max(np.abs(spec.initial_state))))
        drift = float(np.max(np.abs(traj.states - spec.initial_state)))
        verdicts.append({"name": name, "steps": grid.size - 1, "max_drift": drift,
                         "seconds": elapsed,
                         "pass": drift <= 4 * np.finfo(float).eps * scale and elapsed < 1.0})
        series.append(compute_metrics(traj))
        writers[f"{name}.csv"] = traj.to_csv
    writers["stationarity.json"] = _json_writer([{k: v for k, v in x.items() if k != "seconds"}
                                                 for x in verdicts])
    return {"verdicts": verdicts, "series": series, "artifacts": _artifacts(writers)}


def _oscillator_exact(t):
    # y'' + y' + y = 0, y(0) = 1, y'(0) = 0
    w = np.sqrt(3.0) / 2
    e = np.exp(-t / 2)
    y = e * (np.cos(w * t) + np.sin(w * t) / (2 * w))
    v = -e * np.sin(w * t) / w
    return np.column_stack((y, v))


def case_2():
    spec = build_shbf(1.0, ScalarSchedule.constant(1.0), ZERO, make_quadratic([1.0]),
                      initial=([1.0], [0.0]), horizon=5.0)
    em = integrate_em(spec, zero_path(uniform_grid(0.0, 5.0, 1e-4), 1))
    rk = integrate_rk4(spec, uniform_grid(0.0, 5.0, 1e-3))
    em_err = float(np.max(np.abs(em.states - _oscillator_exact(em.grid))))
    rk_err = float(np.max(np.abs(rk.states - _oscillator_exact(rk.grid))))
    verdicts = [{"name": "em", "max_err": em_err, "tolerance": 1e-3, "pass": em_err <= 1e-3},
                {"name": "rk4", "max_err": rk_err, "tolerance": 1e-9, "pass": rk_err <= 1e-9}]
    return {"verdicts": verdicts, "series": [compute_metrics(em), compute_metrics(rk)],
            "artifacts": _artifacts({"oracle.json": _json_writer(verdicts),
                                     "rk4.csv": rk.to_csv})}


def case_3():
    spec = shbf_rate_spec()
    grid = uniform_grid(spec.t_start, spec.horizon, SHBF_STEP)
    start = time.perf_counter()
    traj = integrate_em(spec, sample_brownian(1, grid, spec.dim), record_every=SHBF_RECORD)
    series = compute_metrics(traj)
    fit = fit_rate(series, "suboptimality", (20.0, 200.0), -2.0, 0.3).to_dict()
    elapsed = time.perf_counter() - start
    verdicts = [fit, {"name": "runtime", "seconds": elapsed, "limit": 30.0,
                      "pass": elapsed < 30.0}]
    return {"verdicts": verdicts, "series": [series],
            "artifacts": _artifacts({"metrics.csv": series.to_csv,
                                     "ratefit.json": _json_writer(fit)})}


def case_4():
    spec = shbf_rate_spec()
    start = time.perf_counter()
    stats = run_ensemble(spec, 100, 1000, SHBF_STEP, record_every=SHBF_RECORD)
    fit = fit_rate(stats, "suboptimality", (20.0, 200.0), -3.0, 0.3).to_dict()
    elapsed = time.perf_counter() - start
    verdicts = [fit, {"name": "runtime", "seconds": elapsed, "limit": 300.0,
                      "pass": elapsed < 300.0}]
    return {"verdicts": verdicts, "series": [], "invariants": [stats.invariants],
            "artifacts": _artifacts({"ensemble.csv": stats.to_csv,
                                     "ratefit.json": _json_writer(
                                         {"fits": [fit], "ensemble": stats.summary()})})}


def case_5():
    stats = run_ensemble(vanishing_spec("SAVD"), 100, 1000, 1e-3, record_every=10)
    mean_fit = fit_rate(stats, "suboptimality", (10.0, 100.0), -2.0, 0.3).to_dict()
    path_fit = fit_rate(stats.first_path, "velocity", (10.0, 100.0), -1.0, 0.3).to_dict()
    verdicts = [mean_fit, path_fit]
    return {"verdicts": verdicts, "series": [stats.first_path],
            "invariants": [stats.invariants],
            "artifacts": _artifacts({"ensemble.csv": stats.to_csv,
                                     "ratefit.json": _json_writer({"fits": verdicts})})}


def case_6():
    q = make_quadratic([1.0, 2.0])
    spec_s = build_savd(4.0, ZERO, q, initial=([1.0, -1.0], [0.5, 0.0]), s_start=1.0,
                        horizon=19.0)
    spec_t, tm = image_of(spec_s)
    det = check_equivalence(spec_t, spec_s, tm, zero_path(uniform_grid(1.0, 19.0, 1e-3), 2))
    noisy_s = build_savd(4.0, DiffusionSchedule(_power(1.0, -1.6, 1.0)), q,
                         initial=([1.0, -1.0], [0.5, 0.0]), s_start=1.0, horizon=19.0)
    noisy_t, tm = image_of(noisy_s)
    fine = sample_brownian(7, uniform_grid(1.0, 19.0, 19.0 / 16000), 2)
    study = refinement_study(noisy_t, noisy_s, tm, fine, levels=5, min_slope=0.4)
    verdicts = [{"name": "deterministic", "sup_pos_err": det.sup_pos_err, "tolerance": 1e-6,
                 "pass": det.sup_pos_err <= 1e-6},
                {"name": "stochastic_refinement", **study.refinement}]
    return {"verdicts": verdicts, "series": [],
            "artifacts": _artifacts({"deterministic.json": det.to_json,
                                     "deterministic.csv": det.to_csv,
                                     "refinement.json": study.to_json})}


ALPHAS = (2.0, 2.5, 3.0, 3.5, 4.0)


def case_7():
    verdicts = []
    for a in ALPHAS:
        op = validate_operator_assumptions(*sfogda_image_parameters(a, 1.0))
        opt = validate_shbf_assumption(1.0, savd_image_schedule(a))
        verdicts.append({"alpha": a, "sfogda_gate": op.passed, "savd_gate": opt.passed,
                         "pass": op.passed == (a > 2) and opt.passed == (a > 3)})
    return {"verdicts": verdicts, "series": [],
            "artifacts": _artifacts({"gates.json": _json_writer(verdicts)})}


def case_8():
    stats = run_ensemble(vanishing_spec("SFOGDA_ALT"), 100, 1000, 1e-3, record_every=10)
    mean_fit = fit_rate(stats, "residual_sq", (10.0, 100.0), -2.0, 0.3).to_dict()
    path_fit = fit_rate(stats.first_path, "residual", (10.0, 100.0), -1.0, 0.3).to_dict()
    g = stats.grid
    d10 = float(stats.mean["distance"][np.argmin(np.abs(g - 10.0))])
    d100 = float(stats.mean["distance"][-1])
    verdicts = [mean_fit, path_fit,
                {"name": "distance_decreases", "at_10": d10, "at_100": d100, "pass": d100 < d10}]
    return {"verdicts": verdicts, "series": [stats.first_path],
            "invariants": [stats.invariants],
            "artifacts": _artifacts({"ensemble.csv": stats.to_csv,
                                     "ratefit.json": _json_writer({"fits": verdicts})})}


def energy_runs():
    q = make_quadratic([1.0, 2.0])
    r = make_rotation()
    exp_mu = ScalarSchedule.exponential(0.5, 0.5)
    lin_mu = _power(1.0, 1.0, 2.0)
    one = ScalarSchedule.constant(1.0)
    init = ([1.0, 1.0], [0.0, 0.0])
    return {
        "shbf_t2": build_shbf(1.0, _power(1.0, 2.0, 4.0), ZERO, q, initial=init, t_start=4.0,
                              horizon=16.0),
        "shbfop_const": build_shbfop_alt(2.0, one, one, ZERO, r, initial=init, horizon=16.0),
        "shbfop_exp": build_shbfop_alt(1.5, exp_mu, exp_mu, ZERO, r, initial=init, horizon=8.0),
        "shbfop_linear": build_shbfop_alt(2.0, lin_mu, lin_mu, ZERO, r, initial=init,
                                          t_start=2.0, horizon=16.0),
    }


def case_9():
    verdicts, series, writers = [], [], {}
    for name, spec in energy_runs().items():
        if spec.variant.value == "SHBF":
            gate = validate_shbf_assumption(spec.lam, spec.b)
            t_adm = spec.t_start
        else:
            gate = validate_operator_assumptions(spec.lam, spec.mu, spec.gamma)
            t_adm = gate.quantities.get("admissibility_time", np.inf)
        traj = integrate_rk4(spec, uniform_grid(spec.t_start, spec.horizon, 1e-3))
        energy = energy_series(traj)
        keep = traj.grid >= t_adm
        rep = energy_monotonicity(energy[keep]) if keep.sum() > 1 else {"pass": False}
        verdicts.append({**rep, "name": name, "assumptions": gate.passed,
                         "admissibility_time": t_adm,
                         "pass": bool(gate.passed and rep["pass"])})
        series.append(compute_metrics(traj))
        writers[f"{name}.csv"] = traj.to_csv
    writers["energy.json"] = _json_writer(verdicts)
    return {"verdicts": verdicts, "series": series, "artifacts": _artifacts(writers)}


def case_10():
    rep = martingale_mean_check(shbf_rate_spec(), 200, 5000, step=SHBF_STEP)
    verdict = rep.to_dict()
    return {"verdicts": [verdict], "series": [],
            "artifacts": _artifacts({"martingale.json": _json_writer(
                {**verdict, "values": list(rep.values)})})}


CASES = {1: case_1, 2: case_2, 3: case_3, 4: case_4, 5: case_5, 6: case_6, 7: case_7,
         8: case_8, 9: case_9, 10: case_10}
_cache = {}


def result(n):
    if n not in _cache:
        _cache[n] = CASES[n]()
    return _cache[n]


SUMMARY_KEYS = ("slope", "max_drift", "max_err", "sup_pos_err", "relative_increase", "mean")


def _summary(v):
    label = v.get("metric") or v.get("name") or f"alpha={v.get('alpha')}"
    for key in SUMMARY_KEYS:
        if isinstance(v.get(key), float):
            return f"{label} {key}={v[key]:.3g}"
    return None


def _check(record_property, n):
    res = result(n)
    failed = [v.get("name", v.get("metric", v.get("alpha"))) for v in res["verdicts"]
              if not v["pass"]]
    parts = [x for x in map(_summary, res["verdicts"]) if x]
    record_property("detail", "; ".join(parts) or f"{len(res['verdicts'])} checks")
    assert not failed, f"criterion {n}: failing verdicts {failed}: {res['verdicts']}"


# ---------------------------------------------------------------------------

@pytest.mark.criterion(1)
def test_stationarity(record_property):
    _check(record_property, 1)


@pytest.mark.criterion(2)
def test_shbf_closed_form_oracle(record_property):
    _check(record_property, 2)


@pytest.mark.criterion(3)
def test_shbf_pathwise_rate(record_property):
    _check(record_property, 3)


@pytest.mark.criterion(4)
def test_shbf_improved_mean_rate(record_property):
    _check(record_property, 4)


@pytest.mark.criterion(5)
def test_savd_rates(record_property):
    _check(record_property, 5)


@pytest.mark.criterion(6)
def test_objective_equivalence(record_property):
    _check(record_property, 6)


@pytest.mark.criterion(7)
def test_assumption_gates(record_property):
    _check(record_property, 7)


@pytest.mark.criterion(8)
def test_sfogda_rates(record_property):
    _check(record_property, 8)


@pytest.mark.criterion(9)
def test_energy_dissipation(record_property):
    _check(record_property, 9)


@pytest.mark.criterion(10)
def test_martingale_zero_mean(record_property):
    _check(record_property, 10)


@pytest.mark.criterion(11)
def test_invariants_on_every_trajectory(record_property):
    reports = []
    for n in CASES:
        res = result(n)
        reports += [metric_invariants(s) for s in res["series"]]
        reports += res.get("invariants", [])
    bad = [r for r in reports if not r["pass"]]
    worst_gap = min(r["min_gap"] for r in reports if r["min_gap"] is not None)
    record_property("detail", f"{len(reports)} series, min gap {worst_gap:.3g}")
    assert not bad, bad


@pytest.mark.criterion(12)
def test_reruns_are_byte_identical(record_property):
    differing = []
    for n, run in CASES.items():
        again = run()
        first = result(n)["artifacts"]
        assert set(again["artifacts"]) == set(first)
        differing += [f"{n}:{name}" for name, data in again["artifacts"].items()
                      if data != first[name]]
    record_property("detail", f"{len(CASES)} cases rerun")
    assert not differing, differing
