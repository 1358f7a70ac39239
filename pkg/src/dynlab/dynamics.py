"""Drift/diffusion definitions of the four inertial SDE systems and their
parameter gates.

All systems are integrated in first-order (position, companion) form. With
``v`` the gradient or operator evaluated at the position, every variant has the
drift

    d pos  = (comp - m(t) v) dt
    d comp = (-damp(t) comp + k(t) v) dt + sigma(t) dW

and the variants only differ in the three scalar coefficients:

    ========== ======= ========= =========================
    variant    m       damp      k
    ========== ======= ========= =========================
    SHBF       0       lambda    -b(t)
    SAVD       0       alpha/s   -1
    SHBFOP_ALT mu(t)   lambda    lambda mu - gamma + mu'
    SFOGDA_ALT beta    alpha/s   alpha beta / (2 s)
    ========== ======= ========= =========================

The operator systems therefore never need the Jacobian of ``V``.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from .errors import (InvalidInputError, InvalidParameterError, InvalidScheduleError,
                     InvalidStartError)
from .problems import MonotoneProblem, ObjectiveProblem
from .schedules import DiffusionSchedule, ScalarSchedule


class Variant(str, Enum):
    SHBF = "SHBF"
    SAVD = "SAVD"
    SHBFOP_ALT = "SHBFOP_ALT"
    SFOGDA_ALT = "SFOGDA_ALT"

    @property
    def is_operator(self):
        return self in (Variant.SHBFOP_ALT, Variant.SFOGDA_ALT)

    @property
    def vanishing_damping(self):
        return self in (Variant.SAVD, Variant.SFOGDA_ALT)


@dataclass(frozen=True, eq=False)
class SystemSpec:
    variant: Variant
    problem: object
    diffusion: DiffusionSchedule
    t_start: float
    horizon: float
    initial_position: np.ndarray
    initial_companion: np.ndarray
    lam: Optional[float] = None
    alpha: Optional[float] = None
    beta: Optional[float] = None
    b: Optional[ScalarSchedule] = None
    mu: Optional[ScalarSchedule] = None
    gamma: Optional[ScalarSchedule] = None
    warnings: Tuple[str, ...] = field(default=())

    @property
    def dim(self):
        return self.problem.dim

    @property
    def t_end(self):
        return self.t_start + self.horizon

    @property
    def deterministic(self):
        return self.diffusion.is_zero

    @property
    def initial_state(self):
        return np.concatenate((self.initial_position, self.initial_companion))

    @property
    def stationary_state(self):
        """(solution, 0) for the objective systems and for SHBFOP_ALT/SFOGDA_ALT,
        whose companion at rest is X + m V(y*) = 0 as well."""
        return np.concatenate((self.problem.solution, np.zeros(self.dim)))

    def velocity_weight(self):
        """Schedule m(t) such that velocity = companion - m(t) V(position)."""
        if self.variant == Variant.SHBFOP_ALT:
            return self.mu
        if self.variant == Variant.SFOGDA_ALT:
            return ScalarSchedule.constant(self.beta, self.t_start)
        return None

    def coefficients(self, t):
        """Arrays (m, damp, k) of the unified drift evaluated at times ``t``."""
        t = np.asarray(t, dtype=float)
        zeros = np.zeros_like(t)
        if self.variant == Variant.SHBF:
            return zeros, np.full_like(t, self.lam), -self.b.value(t)
        if self.variant == Variant.SAVD:
            return zeros, self.alpha / t, np.full_like(t, -1.0)
        if self.variant == Variant.SHBFOP_ALT:
            mu = self.mu.value(t)
            k = self.lam * mu - self.gamma.value(t) + self.mu.derivative(t)
            return mu, np.full_like(t, self.lam), k
        return (np.full_like(t, self.beta), self.alpha / t,
                self.alpha * self.beta / (2.0 * t))

    def drift_with(self, m, damp, k, state):
        """Drift for one set of scalar coefficients; ``state`` has shape (..., 2d)."""
        d = self.dim
        pos = state[..., :d]
        comp = state[..., d:]
        v = self.problem.field(pos)
        out = np.empty_like(state)
        if m == 0.0:
            out[..., :d] = comp
        else:
            out[..., :d] = comp - m * v
        out[..., d:] = k * v - damp * comp
        return out

    def drift(self, t, state):
        m, damp, k = (float(c) for c in self.coefficients(t))
        return self.drift_with(m, damp, k, np.asarray(state, dtype=float))

    def describe(self):
        out = {"variant": self.variant.value, "t_start": self.t_start,
               "horizon": self.horizon}
        for name in ("lam", "alpha", "beta"):
            if getattr(self, name) is not None:
                out[name] = getattr(self, name)
        for name in ("b", "mu", "gamma"):
            if getattr(self, name) is not None:
                out[name] = getattr(self, name).to_dict()
        out["diffusion"] = self.diffusion.to_dict()
        out["warnings"] = list(self.warnings)
        return out


# ---------------------------------------------------------------------------
# builders

def _initial_pair(problem, initial):
    if initial is None:
        pos = np.array(problem.solution, dtype=float)
        vel = np.zeros(problem.dim)
    else:
        pos, vel = (np.array(v, dtype=float).reshape(-1) for v in initial)
    if pos.shape != (problem.dim,) or vel.shape != (problem.dim,):
        raise InvalidInputError(
            f"initial state must be two vectors of dimension {problem.dim}")
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(vel))):
        raise InvalidInputError("initial state must be finite")
    return pos, vel


def _check_common(problem, kind, diffusion, horizon):
    if kind == "objective" and not isinstance(problem, ObjectiveProblem):
        raise InvalidInputError("this system needs an ObjectiveProblem")
    if kind == "operator" and not isinstance(problem, MonotoneProblem):
        raise InvalidInputError("this system needs a MonotoneProblem")
    if horizon <= 0:
        raise InvalidInputError("horizon must be positive")
    if diffusion.operator is not None and diffusion.operator.shape[0] != problem.dim:
        raise InvalidInputError("diffusion operator dimension does not match the problem")


def _frozen(v):
    v = np.array(v, dtype=float)
    v.setflags(write=False)
    return v


def build_shbf(lam, b, diffusion, problem, initial=None, t_start=0.0, horizon=1.0):
    """Stochastic heavy ball with friction ``lam`` and nondecreasing scaling ``b``."""
    if lam <= 0:
        raise InvalidParameterError("lambda must be positive")
    _check_common(problem, "objective", diffusion, horizon)
    if t_start < b.domain_start:
        raise InvalidStartError(f"t_start {t_start} precedes the schedule domain")
    if not b.is_nondecreasing():
        raise InvalidScheduleError("b must be nondecreasing")
    y0, x0 = _initial_pair(problem, initial)
    return SystemSpec(Variant.SHBF, problem, diffusion, float(t_start), float(horizon),
                      _frozen(y0), _frozen(x0), lam=float(lam), b=b)


def build_savd(alpha, diffusion, problem, initial=None, s_start=1.0, horizon=1.0):
    """Stochastic Su-Boyd-Candes system with vanishing damping ``alpha/s``."""
    if s_start <= 0:
        raise InvalidStartError("SAVD needs s_start > 0")
    _check_common(problem, "objective", diffusion, horizon)
    z0, q0 = _initial_pair(problem, initial)
    warns = ()
    if alpha <= 3:
        warns = (f"alpha={alpha} <= 3: the O(1/s^2) rate guarantees do not apply",)
    return SystemSpec(Variant.SAVD, problem, diffusion, float(s_start), float(horizon),
                      _frozen(z0), _frozen(q0), alpha=float(alpha), warnings=warns)


def build_shbfop_alt(lam, mu, gamma, diffusion, problem, initial=None, t_start=0.0,
                     horizon=1.0):
    """Operator heavy ball in (Y, Z) coordinates with ``Z = X + mu(t) V(Y)``.

    ``initial`` is the (Y0, X0) pair of the second-order system; the stored
    companion is ``Z0 = X0 + mu(t0) V(Y0)``.
    """
    if lam <= 0:
        raise InvalidParameterError("lambda must be positive")
    _check_common(problem, "operator", diffusion, horizon)
    for name, sched in (("mu", mu), ("gamma", gamma)):
        if not isinstance(sched, ScalarSchedule):
            raise InvalidScheduleError(f"{name} must be a ScalarSchedule")
        if t_start < sched.domain_start:
            raise InvalidStartError(f"t_start {t_start} precedes the {name} domain")
    if not mu.is_nondecreasing():
        raise InvalidScheduleError("mu must be nondecreasing")
    y0, x0 = _initial_pair(problem, initial)
    z0 = x0 + float(mu.value(t_start)) * problem.eval(y0)
    return SystemSpec(Variant.SHBFOP_ALT, problem, diffusion, float(t_start),
                      float(horizon), _frozen(y0), _frozen(z0), lam=float(lam), mu=mu,
                      gamma=gamma)


def build_sfogda_alt(alpha, beta, diffusion, problem, initial=None, s_start=1.0,
                     horizon=1.0):
    """Stochastic Fast OGDA in (Z, R) coordinates with ``R = Q + beta V(Z)``.

    ``initial`` is the (Z0, Q0) pair; the stored companion is ``R0``.
    """
    if beta <= 0:
        raise InvalidParameterError("beta must be positive")
    if s_start <= 0:
        raise InvalidStartError("SFOGDA needs s_start > 0")
    _check_common(problem, "operator", diffusion, horizon)
    z0, q0 = _initial_pair(problem, initial)
    r0 = q0 + beta * problem.eval(z0)
    warns = ()
    if alpha <= 2:
        warns = (f"alpha={alpha} <= 2: the o(1/s) rate guarantees do not apply",)
    return SystemSpec(Variant.SFOGDA_ALT, problem, diffusion, float(s_start),
                      float(horizon), _frozen(z0), _frozen(r0), alpha=float(alpha),
                      beta=float(beta), warnings=warns)


def recover_velocity(trajectory, mu=None, problem=None):
    """Velocity ``X = companion - mu(t) V(position)`` along an operator trajectory.

    ``mu`` defaults to the spec's schedule (the constant ``beta`` for SFOGDA_ALT)
    and ``problem`` to the spec's operator. Works for single trajectories
    (N, 2d) and batches (N, P, 2d).
    """
    spec = trajectory.spec
    if spec is None or not spec.variant.is_operator:
        got = "none" if spec is None else spec.variant.value
        raise InvalidInputError(f"velocity recovery needs an operator variant, got {got}")
    mu = spec.velocity_weight() if mu is None else mu
    problem = spec.problem if problem is None else problem
    d = problem.dim
    states = trajectory.states
    w = mu.value(trajectory.grid).reshape((-1,) + (1,) * (states.ndim - 1))
    return states[..., d:] - w * problem.eval(states[..., :d])


def velocities(trajectory):
    """Second-order velocity for any variant (the companion for objective systems)."""
    if trajectory.spec.variant.is_operator:
        return recover_velocity(trajectory)
    return trajectory.states[..., trajectory.spec.dim:]


# ---------------------------------------------------------------------------
# assumption gates

@dataclass(frozen=True)
class ValidationReport:
    name: str
    passed: bool
    quantities: dict
    diagnostic: str = ""

    def to_dict(self):
        return {"name": self.name, "pass": bool(self.passed), **self.quantities,
                "diagnostic": self.diagnostic}


def validate_shbf_assumption(lam, b):
    """sup over [t0, inf) of b'/b must lie strictly below the friction ``lam``."""
    sup_ratio = b.sup_log_derivative()
    passed = sup_ratio < lam
    q = {"lambda": float(lam), "sup_ratio": float(sup_ratio),
         "margin": float(lam - sup_ratio)}
    if passed:
        q["default_eta"] = 0.5 * (sup_ratio + lam)
    diag = "" if passed else f"sup b'/b = {sup_ratio:.6g} is not < lambda = {lam:.6g}"
    return ValidationReport("shbf_assumption", passed, q, diag)


def _gamma_over_mu_limit(mu, gamma):
    """Exact limit of gamma/mu; the families make it either constant or 0/inf."""
    if mu.growth_signature() == gamma.growth_signature():
        return gamma.coef_at_reference() / mu.coef_at_reference()
    sig_m, sig_g = mu.growth_signature(), gamma.growth_signature()
    return math.inf if sig_g > sig_m else 0.0


def _admissibility_time(lam, ell, mu, eps):
    """Earliest t after which the discriminant B^2 - AC is negative for the given
    epsilon = lambda - eta (gamma/mu == ell is constant for admissible pairs)."""
    # B^2 - AC = mu^2 (4 eps^2 - 4 eps (lam - ell) + (lam - 2 ell + m(t))^2)
    # with m = mu'/mu; negative iff |lam - 2 ell + m(t)| < w
    w2 = 4.0 * eps * (lam - ell) - 4.0 * eps * eps
    if w2 <= 0:
        return math.inf
    w = math.sqrt(w2)
    lo, hi = -w - (lam - 2 * ell), w - (lam - 2 * ell)

    def inside(t):
        m = float(mu.log_derivative(t))
        return lo < m < hi

    m_inf = mu.limit_log_derivative()
    if not (lo < m_inf < hi):
        return math.inf
    t0 = mu.domain_start
    breaks = [t0] + mu.critical_times()
    # walk monotone pieces from the last one backwards
    start = math.inf
    for j in range(len(breaks) - 1, -1, -1):
        a = breaks[j]
        if inside(a):
            start = a
            continue
        # m is monotone on the piece [a, next); find the crossing into (lo, hi)
        b_hi = breaks[j + 1] if j + 1 < len(breaks) else None
        left = a
        right = b_hi if b_hi is not None else max(2 * a, a + 1)
        if b_hi is None:
            while not inside(right):
                left, right = right, 2 * right
                if right > 1e300:
                    return math.inf
        for _ in range(200):
            mid = 0.5 * (left + right)
            if inside(mid):
                right = mid
            else:
                left = mid
        start = right
        break
    return start


def validate_operator_assumptions(lam, mu, gamma):
    """Gate for the operator heavy ball: lim gamma/mu = ell > 0,
    sup mu'/gamma < 1 and 2 lam - 3 ell + inf mu'/mu > 0."""
    ell = _gamma_over_mu_limit(mu, gamma)
    if not (0 < ell < math.inf):
        return ValidationReport(
            "operator_assumptions", False, {"lambda": float(lam), "ell": ell},
            "gamma/mu has no finite positive limit for this family pair")
    # gamma == ell * mu, so mu'/gamma == (mu'/mu) / ell
    sup_mudot_gamma = mu.sup_log_derivative() / ell
    inf_mudot_mu = mu.inf_log_derivative()
    margin = 2 * lam - 3 * ell + inf_mudot_mu
    passed = ell > 0 and sup_mudot_gamma < 1 and margin > 0
    eta = lam - 0.5 * (lam - ell)
    q = {"lambda": float(lam), "ell": float(ell),
         "sup_mudot_over_gamma": float(sup_mudot_gamma),
         "inf_mudot_over_mu": float(inf_mudot_mu), "margin": float(margin),
         "default_eta": float(eta)}
    diag = []
    if not sup_mudot_gamma < 1:
        diag.append(f"sup mu'/gamma = {sup_mudot_gamma:.6g} is not < 1")
    if not margin > 0:
        diag.append(f"2 lambda - 3 ell + inf mu'/mu = {margin:.6g} is not > 0")
    if passed:
        q["admissibility_time"] = _admissibility_time(lam, ell, mu, lam - eta)
    return ValidationReport("operator_assumptions", passed, q, "; ".join(diag))


def savd_image_schedule(alpha, s0=1.0, t0=0.0):
    """b(t) of the heavy ball system equivalent to SAVD (friction 1)."""
    return ScalarSchedule.exponential((s0 / (alpha - 1)) ** 2, 2.0 / (alpha - 1),
                                      domain_start=t0, t_ref=t0)


def sfogda_image_parameters(alpha, beta, s0=1.0, t0=0.0):
    """(lambda, mu, gamma) of the operator heavy ball equivalent to SFOGDA."""
    lam = 2.0 * (alpha - 1) / alpha
    mu = ScalarSchedule.exponential(2.0 * beta * s0 / alpha, 2.0 / alpha,
                                    domain_start=t0, t_ref=t0)
    return lam, mu, mu


# ---------------------------------------------------------------------------

def quadratic_form_sign(A, B, C):
    """Sign of ``A|P|^2 + 2B<P,Q> + C|Q|^2`` over all P, Q."""
    if A == 0:
        raise InvalidInputError("A must be nonzero")
    if B * B - A * C <= 0:
        return "nonnegative" if A > 0 else "nonpositive"
    return "indefinite"
