"""Performance metrics, Lyapunov energies, rate fits and Monte Carlo ensembles."""

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .dynamics import Variant, validate_operator_assumptions, velocities
from .errors import (EnsembleFailureError, InsufficientDataError, InvalidInputError,
                     InvalidParameterError)
from .sde import integrate_em_batch, uniform_grid

CLIP = 1e-300
MIN_FIT_POINTS = 8
GAP_TOL = 1e-10
SUBOPT_TOL = 1e-12

OBJECTIVE_METRICS = ("suboptimality", "residual", "residual_sq", "gap", "velocity",
                     "velocity_sq", "distance")
OPERATOR_METRICS = ("residual", "residual_sq", "gap", "velocity", "velocity_sq",
                    "distance")


@dataclass(frozen=True, eq=False)
class MetricSeries:
    """Metric values on a time grid; each array has the grid on its first axis
    (a second axis, if present, indexes paths)."""

    grid: np.ndarray
    values: Dict[str, np.ndarray]

    def __getitem__(self, name):
        return self.values[name]

    @property
    def names(self):
        return tuple(self.values)

    def to_csv(self, path):
        names = self.names
        cols = [self.grid] + [self.values[k] for k in names]
        np.savetxt(path, np.column_stack(cols), fmt="%.17g", delimiter=",",
                   header=",".join(("t",) + names), comments="")


def compute_metrics(traj, problem=None):
    """Every applicable metric at every grid point of ``traj`` (single or batch)."""
    spec = traj.spec
    problem = spec.problem if problem is None else problem
    d = problem.dim
    if traj.states.shape[-1] != 2 * d:
        raise InvalidInputError(
            f"trajectory state width {traj.states.shape[-1]} != 2 * problem dim {d}")
    y = traj.states[..., :d]
    dev = y - problem.solution
    v = problem.field(y)
    x = velocities(traj)
    residual = np.linalg.norm(v, axis=-1)
    speed = np.linalg.norm(x, axis=-1)
    out = {}
    if problem.kind == "objective":
        out["suboptimality"] = problem.eval(y) - problem.inf_value
    out["residual"] = residual
    out["residual_sq"] = residual * residual
    out["gap"] = np.sum(dev * v, axis=-1)
    out["velocity"] = speed
    out["velocity_sq"] = speed * speed
    out["distance"] = problem.distance(y)
    return MetricSeries(traj.grid, out)


def metric_invariants(series):
    """Sign and finiteness invariants of a metric series."""
    vals = series.values
    has_nan = any(bool(np.any(~np.isfinite(a))) for a in vals.values())
    mins = {k: float(np.nanmin(a)) for k, a in vals.items()}
    ok = not has_nan
    ok &= mins.get("gap", 0.0) >= -GAP_TOL
    ok &= mins.get("suboptimality", 0.0) >= -SUBOPT_TOL
    for k in ("residual", "velocity", "distance", "residual_sq", "velocity_sq"):
        if k in mins:
            ok &= mins[k] >= 0.0
    return {"name": "metric_invariants", "pass": bool(ok), "has_nan": has_nan,
            "min_gap": mins.get("gap"), "min_suboptimality": mins.get("suboptimality"),
            "minima": mins}


# ---------------------------------------------------------------------------
# energies

def _check_eta(eta, lam):
    if not 0 < eta < lam:
        raise InvalidParameterError(f"eta={eta} must lie in (0, lambda={lam})")


def _broadcast_time(values, like):
    values = np.asarray(values, dtype=float)
    return values.reshape(values.shape + (1,) * (np.ndim(like) - values.ndim))


def _sq(a):
    return np.sum(a * a, axis=-1)


def energy_shbf(eta, y_star, t, y, x, b, problem, lam):
    """``b(t)(f(y) - inf f) + |eta(y - y*) + x|^2/2 + eta(lam - eta)|y - y*|^2/2``."""
    _check_eta(eta, lam)
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    dev = y - y_star
    gap = problem.eval(y) - problem.inf_value
    return (_broadcast_time(b.value(t), gap) * gap + 0.5 * _sq(eta * dev + x)
            + 0.5 * eta * (lam - eta) * _sq(dev))


def energy_shbfop(eta, y_star, t, x, y, v, mu, lam):
    """Four-term energy of the operator heavy ball; ``v = V(y)``."""
    _check_eta(eta, lam)
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    dev = y - y_star
    m = _broadcast_time(mu.value(t), _sq(dev))
    m_vec = m[..., None]
    return (0.5 * _sq(2 * eta * dev + 2 * x + m_vec * v) + 2 * eta * (lam - eta) * _sq(dev)
            + 2 * eta * m * np.sum(dev * v, axis=-1) + 0.5 * m * m * _sq(v))


def scaled_phi(t, y, x, b, problem, t0):
    """``g(t) [f(y) - inf f + |x|^2 / (2 b(t))]`` with ``g(t) = int_{(t+t0)/2}^t b``."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= t0):
        raise InvalidParameterError("scaled_phi needs t > t0")
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    g = b.integral(0.5 * (t + t0), t)
    gap = problem.eval(y) - problem.inf_value
    bt = _broadcast_time(b.value(t), gap)
    return _broadcast_time(g, gap) * (gap + _sq(x) / (2.0 * bt))


def default_eta(spec):
    """Midpoint of the admissible interval for the energy parameter."""
    if spec.variant == Variant.SHBF:
        return 0.5 * (spec.b.sup_log_derivative() + spec.lam)
    if spec.variant == Variant.SHBFOP_ALT:
        rep = validate_operator_assumptions(spec.lam, spec.mu, spec.gamma)
        if "ell" not in rep.quantities or not math.isfinite(rep.quantities["ell"]):
            raise InvalidParameterError("operator assumptions give no admissible eta")
        ell = rep.quantities["ell"]
        return spec.lam - 0.5 * (spec.lam - ell)
    if spec.variant == Variant.SAVD:
        return spec.alpha - 1.0
    raise InvalidInputError(f"no default eta for {spec.variant.value}")


def energy_series(traj, eta=None):
    """Energy along a heavy-ball trajectory (SHBF or SHBFOP_ALT)."""
    spec = traj.spec
    eta = default_eta(spec) if eta is None else eta
    p = spec.problem
    d = p.dim
    y = traj.states[..., :d]
    if spec.variant == Variant.SHBF:
        return energy_shbf(eta, p.solution, traj.grid, y, traj.states[..., d:], spec.b, p,
                           spec.lam)
    if spec.variant == Variant.SHBFOP_ALT:
        return energy_shbfop(eta, p.solution, traj.grid, velocities(traj), y, p.eval(y),
                             spec.mu, spec.lam)
    raise InvalidInputError(f"energy_series needs SHBF or SHBFOP_ALT, got {spec.variant.value}")


def energy_monotonicity(energy, rel_tol=1e-8):
    """Largest single-step increase relative to the initial energy."""
    energy = np.asarray(energy, dtype=float)
    e0 = float(energy[0])
    inc = float(np.max(np.diff(energy))) if energy.size > 1 else 0.0
    scale = e0 if e0 > 0 else 1.0
    return {"name": "energy_nonincreasing", "pass": bool(inc <= rel_tol * scale),
            "initial_energy": e0, "max_step_increase": inc,
            "relative_increase": inc / scale, "tolerance": rel_tol}


# ---------------------------------------------------------------------------
# rate fits

@dataclass(frozen=True)
class RateFit:
    metric: str
    window: Tuple[float, float]
    slope: float
    intercept: float
    r_squared: float
    target: float
    tolerance: float
    clipped: bool
    n_points: int

    @property
    def passed(self):
        return bool(self.slope <= self.target + self.tolerance)

    def to_dict(self):
        return {"metric": self.metric, "window": list(self.window), "slope": self.slope,
                "target": self.target, "tolerance": self.tolerance, "pass": self.passed,
                "r2": self.r_squared, "clipped": self.clipped}


def fit_power_law(t, values, window=None, target=0.0, tolerance=0.0, metric=""):
    """Least-squares line through (log t, log value) over ``window``.

    The default window is the last decade ``[t_end / 10, t_end]``.
    """
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    if t.shape != values.shape or t.ndim != 1:
        raise InvalidInputError("fit needs matching 1-D time and value arrays")
    if window is None:
        window = (t[-1] / 10.0, t[-1])
    lo, hi = float(window[0]), float(window[1])
    if not 0 < lo < hi:
        raise InvalidInputError(f"invalid fit window [{lo}, {hi}]")
    eps = 1e-9 * hi
    sel = (t >= lo - eps) & (t <= hi + eps)
    if int(sel.sum()) < MIN_FIT_POINTS:
        raise InsufficientDataError(
            f"{int(sel.sum())} points in window [{lo}, {hi}], need {MIN_FIT_POINTS}")
    vals = values[sel]
    if not np.all(np.isfinite(vals)):
        raise InvalidInputError("non-finite values in fit window")
    clipped = bool(np.any(vals < CLIP))
    lx = np.log(t[sel])
    ly = np.log(np.maximum(vals, CLIP))
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    ss_res = float(np.sum(resid ** 2))
    if ss_tot > 0:
        r2 = max(0.0, 1.0 - ss_res / ss_tot)
    else:
        r2 = 1.0
    return RateFit(metric, (lo, hi), float(slope), float(intercept), float(r2),
                   float(target), float(tolerance), clipped, int(sel.sum()))


def fit_rate(series, metric, window=None, target=0.0, tolerance=0.0):
    """Fit the decay exponent of one metric of a MetricSeries (or EnsembleStats mean)."""
    values = series.values[metric] if isinstance(series, MetricSeries) else series.mean[metric]
    return fit_power_law(series.grid, values, window, target, tolerance, metric)


# ---------------------------------------------------------------------------
# ensembles

@dataclass(frozen=True, eq=False)
class EnsembleStats:
    grid: np.ndarray
    n_paths: int
    seeds: Tuple[int, ...]
    mean: Dict[str, np.ndarray]
    sd: Dict[str, np.ndarray]
    ci_lo: Dict[str, np.ndarray]
    ci_hi: Dict[str, np.ndarray]
    diverged: Dict[int, tuple]
    invariants: dict
    first_path: Optional[MetricSeries] = field(default=None, repr=False)

    @property
    def n_used(self):
        return self.n_paths - len(self.diverged)

    @property
    def ci_defined(self):
        return self.n_used > 1

    def to_csv(self, path):
        rows = []
        for name in self.mean:
            for i, t in enumerate(self.grid):
                rows.append("%.17g,%s,%.17g,%.17g,%.17g,%.17g" % (
                    t, name, self.mean[name][i], self.sd[name][i], self.ci_lo[name][i],
                    self.ci_hi[name][i]))
        with open(path, "w") as fh:
            fh.write("t,metric,mean,sd,ci_lo,ci_hi\n")
            fh.write("\n".join(rows) + "\n")

    def summary(self):
        return {"n_paths": self.n_paths, "n_used": self.n_used,
                "n_diverged": len(self.diverged), "seeds": list(self.seeds),
                "diverged_seeds": sorted(self.diverged), "ci_defined": self.ci_defined}


def aggregate(values):
    """Mean, sd and 95% normal band over the path axis (axis 1).

    The mean is taken as ``ref + mean(values - ref)`` with ``ref`` the first path,
    so identical paths give exactly their common value and sd = 0.
    """
    n = values.shape[1]
    ref = values[:, :1]
    dev = values - ref
    mean = ref[:, 0] + dev.mean(axis=1)
    if n > 1:
        sd = np.sqrt(np.sum((values - mean[:, None]) ** 2, axis=1) / (n - 1))
        half = 1.96 * sd / math.sqrt(n)
        return mean, sd, mean - half, mean + half
    nan = np.full_like(mean, np.nan)
    return mean, np.zeros_like(mean), nan, nan.copy()


def run_ensemble(spec, n_paths, base_seed, step, record_every=1, max_diverged_frac=0.1):
    """Integrate seeds ``base_seed + j`` on a shared uniform grid and aggregate."""
    if n_paths < 1:
        raise InvalidInputError("n_paths must be >= 1")
    grid = uniform_grid(spec.t_start, spec.horizon, step)
    seeds = tuple(range(int(base_seed), int(base_seed) + int(n_paths)))
    batch = integrate_em_batch(spec, grid, seeds, record_every)
    n_bad = len(batch.diverged)
    if n_bad > max_diverged_frac * n_paths:
        raise EnsembleFailureError(n_bad, n_paths, sorted(batch.diverged))
    ok = batch.ok
    series = compute_metrics(batch)
    used = MetricSeries(series.grid, {k: v[:, ok] for k, v in series.values.items()})
    mean, sd, lo, hi = {}, {}, {}, {}
    for k, v in used.values.items():
        mean[k], sd[k], lo[k], hi[k] = aggregate(v)
    first = int(np.argmax(ok))
    first_path = MetricSeries(series.grid, {k: v[:, first] for k, v in series.values.items()})
    return EnsembleStats(batch.grid, int(n_paths), seeds, mean, sd, lo, hi,
                         dict(batch.diverged), metric_invariants(used), first_path)


# ---------------------------------------------------------------------------
# martingale check

@dataclass(frozen=True)
class MartingaleReport:
    n_paths: int
    eta: float
    mean: float
    stderr: float
    values: Tuple[float, ...] = field(repr=False)

    @property
    def passed(self):
        return bool(abs(self.mean) <= 3.0 * self.stderr)

    def to_dict(self):
        return {"name": "martingale_zero_mean", "n_paths": self.n_paths, "eta": self.eta,
                "mean": self.mean, "stderr": self.stderr, "pass": self.passed}


def martingale_mean_check(spec, n_paths, base_seed, eta=None, y_star=None, step=1e-3):
    """Ensemble mean of ``N = sum_i <eta(Y_i - y*) + X_i, sigma(t_i) dW_i>`` at the
    final time against three standard errors."""
    if spec.variant.is_operator:
        raise InvalidInputError("martingale_mean_check needs an objective variant")
    if n_paths < 2:
        raise InvalidInputError("n_paths must be >= 2 for a standard error")
    eta = default_eta(spec) if eta is None else float(eta)
    y_star = spec.problem.solution if y_star is None else np.asarray(y_star, dtype=float)
    d = spec.dim
    grid = uniform_grid(spec.t_start, spec.horizon, step)
    seeds = tuple(range(int(base_seed), int(base_seed) + int(n_paths)))
    acc = np.zeros(n_paths)

    def hook(off, lo, before, noise):
        w = eta * (before[..., :d] - y_star) + before[..., d:]
        acc[off:off + w.shape[1]] += np.sum(w * noise, axis=(0, 2))

    batch = integrate_em_batch(spec, grid, seeds, record_every=grid.size - 1, on_chunk=hook)
    ok = batch.ok
    if (~ok).sum() > 0.1 * n_paths:
        raise EnsembleFailureError(int((~ok).sum()), n_paths, sorted(batch.diverged))
    vals = acc[ok]
    n = vals.size
    mean = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(n))
    return MartingaleReport(int(n_paths), eta, mean, stderr, tuple(float(v) for v in vals))
