"""Time changes between the constant-friction (t) and vanishing-damping (s)
systems, and pathwise equivalence checks under coupled Brownian increments.

With ``c = alpha - 1`` (objective pair) or ``c = alpha / 2`` (operator pair)

    tau(s)   = t0 + c log(s / s0)          kappa(t) = s0 exp((t - t0) / c)

positions agree as ``Z(s) = Y(tau(s))`` and velocities as ``Q(s) = tau'(s) X(tau(s))``.
Diffusions transform with the power 3/2 of the time derivative, and
``dW_t = sqrt(tau'(s)) dW_s`` couples the two noises.
"""

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .dynamics import (Variant, build_shbf, build_shbfop_alt, savd_image_schedule,
                       sfogda_image_parameters, velocities)
from .errors import (InvalidInputError, InvalidPairingError, InvalidParameterError,
                     UnsupportedCompositionError)
from .schedules import DiffusionSchedule, ScalarSchedule
from .sde import (BrownianPath, coarsen_path, integrate_em, integrate_rk4, is_uniform)

KINDS = ("opt", "op")
PAIRING_RTOL = 1e-10


@dataclass(frozen=True)
class TimeMap:
    kind: str
    alpha: float
    t0: float = 0.0
    s0: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParameterError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not self.s0 > 0:
            raise InvalidParameterError("s0 must be positive")
        if self.kind == "opt" and not self.alpha > 1:
            raise InvalidParameterError("objective time map needs alpha > 1")
        if self.kind == "op" and not self.alpha > 0:
            raise InvalidParameterError("operator time map needs alpha > 0")

    @property
    def scale(self):
        return self.alpha - 1.0 if self.kind == "opt" else 0.5 * self.alpha

    def tau(self, s):
        return self.t0 + self.scale * np.log(np.asarray(s, dtype=float) / self.s0)

    def kappa(self, t):
        return self.s0 * np.exp((np.asarray(t, dtype=float) - self.t0) / self.scale)

    def tau_dot(self, s):
        return self.scale / np.asarray(s, dtype=float)

    def kappa_dot(self, t):
        return self.kappa(t) / self.scale

    def to_dict(self):
        return {"kind": self.kind, "alpha": self.alpha, "t0": self.t0, "s0": self.s0}


def make_time_map(kind, alpha, t0=0.0, s0=1.0):
    return TimeMap(kind, float(alpha), float(t0), float(s0))


# ---------------------------------------------------------------------------
# diffusion transform

def _t_to_s(tm, sched):
    """``tau'(s)^{3/2} sched(tau(s))`` as an s-side power law."""
    c = tm.scale
    if sched.family == "constant":
        a, lead = 0.0, sched.coef
    elif sched.family == "exponential":
        a = sched.rate
        lead = sched.coef * math.exp(a * (tm.t0 - sched.t_ref))
    else:
        raise UnsupportedCompositionError(
            f"a {sched.family} t-side schedule composed with tau leaves the supported families")
    power = a * c - 1.5
    coef = lead * tm.s0 ** (-a * c) * c ** 1.5
    return ScalarSchedule.power_law(coef, power, tm.s0)


def _s_to_t(tm, sched):
    """``kappa'(t)^{3/2} sched(kappa(t))`` as a t-side exponential."""
    c = tm.scale
    if sched.family == "constant":
        r = 0.0
    elif sched.family == "power":
        r = sched.power
    else:
        raise UnsupportedCompositionError(
            f"a {sched.family} s-side schedule composed with kappa leaves the supported families")
    coef = sched.coef * tm.s0 ** r * (tm.s0 / c) ** 1.5
    return ScalarSchedule.exponential(coef, (r + 1.5) / c, domain_start=tm.t0, t_ref=tm.t0)


def transform_diffusion(tm, sigma, direction="t_to_s"):
    """Move a diffusion schedule across the time change.

    ``direction="t_to_s"`` gives ``sigma_Z(s) = tau'(s)^{3/2} sigma_Y(tau(s))`` and
    ``"s_to_t"`` gives ``sigma_Y(t) = kappa'(t)^{3/2} sigma_Z(kappa(t))``.
    """
    if direction not in ("t_to_s", "s_to_t"):
        raise InvalidInputError(f"unknown direction {direction!r}")
    if sigma.is_zero:
        return DiffusionSchedule.zero()
    if direction == "t_to_s":
        mult = _t_to_s(tm, sigma.multiplier)
        cutoff = None if sigma.cutoff is None else float(tm.kappa(sigma.cutoff))
    else:
        mult = _s_to_t(tm, sigma.multiplier)
        cutoff = None if sigma.cutoff is None else float(tm.tau(sigma.cutoff))
    return DiffusionSchedule(mult, sigma.operator, cutoff)


def couple_increments(path_s, tm):
    """Brownian increments on the image grid ``tau(s_i)``:
    ``dW_t_i = sqrt(tau'(s_i)) dW_s_i``."""
    s = path_s.grid
    if not (is_uniform(s) or is_uniform(np.log(s))):
        raise InvalidInputError("s-grid must be uniform or log-uniform")
    t_grid = tm.tau(s)
    inc = np.sqrt(tm.tau_dot(s[:-1]))[:, None] * path_s.increments
    return BrownianPath(path_s.seed, t_grid, inc)


# ---------------------------------------------------------------------------
# theorem images

def _image_initial(spec_s, tm):
    z0 = np.array(spec_s.initial_position)
    if spec_s.variant == Variant.SFOGDA_ALT:
        q0 = spec_s.initial_companion - spec_s.beta * spec_s.problem.eval(z0)
    else:
        q0 = np.array(spec_s.initial_companion)
    return z0, q0 / float(tm.tau_dot(spec_s.t_start))


def image_of(spec_s, t0=0.0):
    """The constant-friction system equivalent to a SAVD or SFOGDA_ALT spec.

    Returns ``(spec_t, time_map)``.
    """
    if spec_s.variant == Variant.SAVD:
        tm = make_time_map("opt", spec_s.alpha, t0, spec_s.t_start)
    elif spec_s.variant == Variant.SFOGDA_ALT:
        tm = make_time_map("op", spec_s.alpha, t0, spec_s.t_start)
    else:
        raise InvalidInputError(f"no time-rescaled image for {spec_s.variant.value}")
    horizon = float(tm.tau(spec_s.t_end)) - t0
    diff = transform_diffusion(tm, spec_s.diffusion, "s_to_t")
    initial = _image_initial(spec_s, tm)
    if tm.kind == "opt":
        b = savd_image_schedule(spec_s.alpha, tm.s0, t0)
        spec_t = build_shbf(1.0, b, diff, spec_s.problem, initial, t0, horizon)
    else:
        lam, mu, gamma = sfogda_image_parameters(spec_s.alpha, spec_s.beta, tm.s0, t0)
        spec_t = build_shbfop_alt(lam, mu, gamma, diff, spec_s.problem, initial, t0, horizon)
    return spec_t, tm


def _close(a, b, rtol=PAIRING_RTOL):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a.shape == b.shape and bool(np.all(np.abs(a - b) <= rtol * np.maximum(1.0, np.abs(b))))


def _schedule_matches(got, want, times):
    return got is not None and _close(got.value(times), want.value(times)) and \
        _close(got.log_derivative(times), want.log_derivative(times))


def validate_pairing(spec_t, spec_s, tm):
    """Raise InvalidPairingError unless ``spec_t`` is the theorem image of ``spec_s``."""
    want_s = Variant.SAVD if tm.kind == "opt" else Variant.SFOGDA_ALT
    want_t = Variant.SHBF if tm.kind == "opt" else Variant.SHBFOP_ALT
    if spec_s.variant != want_s:
        raise InvalidPairingError("variant", f"s-side must be {want_s.value}")
    if spec_t.variant != want_t:
        raise InvalidPairingError("variant", f"t-side must be {want_t.value}")
    if not _close(spec_s.alpha, tm.alpha):
        raise InvalidPairingError("alpha", f"s-side alpha {spec_s.alpha} != map alpha {tm.alpha}")
    if spec_t.problem is not spec_s.problem:
        raise InvalidPairingError("problem", "both sides must share one problem instance")
    if not _close(spec_s.t_start, tm.s0):
        raise InvalidPairingError("s_start", f"s-side starts at {spec_s.t_start}, map s0 = {tm.s0}")
    if not _close(spec_t.t_start, tm.t0):
        raise InvalidPairingError("t_start", f"t-side starts at {spec_t.t_start}, map t0 = {tm.t0}")
    if not _close(spec_t.t_end, tm.tau(spec_s.t_end)):
        raise InvalidPairingError("horizon", "t-side horizon is not the image of the s-side one")
    times = tm.t0 + np.array([0.0, 0.5, 1.0]) * (spec_t.t_end - tm.t0)
    if tm.kind == "opt":
        if not _close(spec_t.lam, 1.0):
            raise InvalidPairingError("lambda", f"image friction must be 1, got {spec_t.lam}")
        if not _schedule_matches(spec_t.b, savd_image_schedule(tm.alpha, tm.s0, tm.t0), times):
            raise InvalidPairingError("b", "b is not the exponential image schedule")
    else:
        lam, mu, gamma = sfogda_image_parameters(tm.alpha, spec_s.beta, tm.s0, tm.t0)
        if not _close(spec_t.lam, lam):
            raise InvalidPairingError("lambda", f"image friction must be {lam}, got {spec_t.lam}")
        if not _schedule_matches(spec_t.mu, mu, times):
            raise InvalidPairingError("mu", "mu is not the exponential image schedule")
        if not _schedule_matches(spec_t.gamma, gamma, times):
            raise InvalidPairingError("gamma", "gamma is not the exponential image schedule")
    y0, x0 = _image_initial(spec_s, tm)
    if not _close(spec_t.initial_position, y0):
        raise InvalidPairingError("initial", "t-side start position differs from the s-side one")
    if spec_t.variant == Variant.SHBFOP_ALT:
        x_t = spec_t.initial_companion - spec_t.mu.value(tm.t0) * spec_t.problem.eval(y0)
    else:
        x_t = spec_t.initial_companion
    if not _close(x_t, x0):
        raise InvalidPairingError("initial", "t-side start velocity is not the rescaled s-side one")
    want = transform_diffusion(tm, spec_s.diffusion, "s_to_t")
    got = spec_t.diffusion
    if want.is_zero != got.is_zero:
        raise InvalidPairingError("diffusion", "exactly one side is noise-free")
    if not want.is_zero:
        if not _close(got.scalar(times), want.scalar(times)):
            raise InvalidPairingError("diffusion", "t-side diffusion is not the transformed s-side one")
        op_w = np.eye(spec_s.dim) if want.operator is None else want.operator
        op_g = np.eye(spec_s.dim) if got.operator is None else got.operator
        if not _close(op_g, op_w):
            raise InvalidPairingError("diffusion", "diffusion operators differ")


# ---------------------------------------------------------------------------
# equivalence

@dataclass(frozen=True, eq=False)
class EquivalenceReport:
    kind: str
    alpha: float
    grid: np.ndarray
    t_grid: np.ndarray
    pos_err: np.ndarray
    vel_err: np.ndarray
    steps: Tuple[float, ...]
    scheme: str
    refinement: Optional[dict] = field(default=None)

    @property
    def sup_pos_err(self):
        return float(np.max(self.pos_err))

    @property
    def sup_vel_err(self):
        return float(np.max(self.vel_err))

    @property
    def slope(self):
        return None if self.refinement is None else self.refinement["slope"]

    def to_dict(self):
        out = {"kind": self.kind, "alpha": self.alpha, "sup_pos_err": self.sup_pos_err,
               "sup_vel_err": self.sup_vel_err, "steps": list(self.steps),
               "slope": self.slope, "scheme": self.scheme}
        if self.refinement is not None:
            out["refinement"] = self.refinement
        return out

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")

    def to_csv(self, path):
        np.savetxt(path, np.column_stack((self.grid, self.t_grid, self.pos_err, self.vel_err)),
                   fmt="%.17g", delimiter=",", header="s,t,pos_err,vel_err", comments="")


def _integrate_pair(spec_t, spec_s, tm, path_s, scheme):
    path_t = couple_increments(path_s, tm)
    if scheme == "rk4":
        traj_s = integrate_rk4(spec_s, path_s.grid)
        traj_t = integrate_rk4(spec_t, path_t.grid)
    elif scheme == "em":
        traj_s = integrate_em(spec_s, path_s, check_stability=False)
        traj_t = integrate_em(spec_t, path_t, check_stability=False)
    else:
        raise InvalidInputError(f"unknown scheme {scheme!r}")
    return traj_s, traj_t


def check_equivalence(spec_t, spec_s, tm, path_s, velocity_rule=None, scheme=None):
    """Integrate both sides on coupled grids and compare them pathwise.

    ``velocity_rule(s)`` is the factor mapping t-side velocities to s-side ones
    (default ``tau'(s)``). ``scheme`` defaults to RK4 for noise-free pairs and
    Euler-Maruyama otherwise.
    """
    validate_pairing(spec_t, spec_s, tm)
    if scheme is None:
        scheme = "rk4" if spec_s.diffusion.is_zero else "em"
    rule = tm.tau_dot if velocity_rule is None else velocity_rule
    traj_s, traj_t = _integrate_pair(spec_t, spec_s, tm, path_s, scheme)
    d = spec_s.dim
    pos_err = np.linalg.norm(traj_s.states[:, :d] - traj_t.states[:, :d], axis=1)
    q = velocities(traj_s)
    x = velocities(traj_t)
    vel_err = np.linalg.norm(q - np.asarray(rule(traj_s.grid))[:, None] * x, axis=1)
    steps = (float(np.max(np.diff(path_s.grid))),)
    return EquivalenceReport(tm.kind, tm.alpha, traj_s.grid, traj_t.grid, pos_err, vel_err,
                             steps, scheme)


def refinement_study(spec_t, spec_s, tm, fine_path, levels=5, min_slope=0.4):
    """Equivalence error on coarsened copies of one fine path.

    Level ``j`` uses ``coarsen_path(fine_path, 2**(levels - 1 - j))``; the study
    passes when the sup position error decreases at every halving and its
    log-log slope against the step is at least ``min_slope``.
    """
    if levels < 2:
        raise InvalidInputError("a refinement study needs at least two levels")
    steps, errors, reports = [], [], []
    for j in range(levels):
        path = coarsen_path(fine_path, 2 ** (levels - 1 - j))
        rep = check_equivalence(spec_t, spec_s, tm, path)
        steps.append(rep.steps[0])
        errors.append(rep.sup_pos_err)
        reports.append(rep)
    lx = np.log(np.array(steps))
    ly = np.log(np.maximum(np.array(errors), 1e-300))
    slope = float(np.polyfit(lx, ly, 1)[0])
    monotone = all(b < a for a, b in zip(errors, errors[1:]))
    study = {"steps": steps, "sup_pos_err": errors,
             "sup_vel_err": [r.sup_vel_err for r in reports], "slope": slope,
             "min_slope": min_slope, "monotone": monotone,
             "pass": bool(monotone and slope >= min_slope)}
    fine = reports[-1]
    return EquivalenceReport(fine.kind, fine.alpha, fine.grid, fine.t_grid, fine.pos_err,
                             fine.vel_err, tuple(steps), fine.scheme, study)
