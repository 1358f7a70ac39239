"""Closed-form time-dependent coefficients and diffusion schedules.

Every family is a member of ``c * t**r * log(t)**k * exp(a*(t - t_ref))`` with at
most one of the three factors active, which is what lets the sup/inf/limit
queries below be answered exactly on unbounded intervals.
"""

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import InvalidScheduleError, UnsupportedScheduleError

FAMILIES = ("constant", "power", "power_log", "exponential")


@dataclass(frozen=True)
class ScalarSchedule:
    family: str
    coef: float
    power: float = 0.0
    rate: float = 0.0
    t_ref: float = 0.0
    domain_start: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidScheduleError(f"unknown schedule family {self.family!r}")
        vals = (self.coef, self.power, self.rate, self.t_ref, self.domain_start)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidScheduleError("schedule parameters must be finite")
        if self.coef <= 0:
            raise InvalidScheduleError("schedule coefficient must be positive")
        if self.domain_start < 0:
            raise InvalidScheduleError("domain_start must be >= 0")
        if self.family == "power" and self.power != 0 and self.domain_start <= 0:
            raise InvalidScheduleError("power family needs domain_start > 0")
        if self.family == "power_log" and self.domain_start <= 1:
            raise InvalidScheduleError("power_log family needs domain_start > 1")
        if self.family in ("constant", "exponential") and self.power != 0:
            raise InvalidScheduleError(f"{self.family} family takes no power")
        if self.family != "exponential" and self.rate != 0:
            raise InvalidScheduleError(f"{self.family} family takes no rate")

    # constructors -----------------------------------------------------------
    @classmethod
    def constant(cls, c, domain_start=0.0):
        return cls("constant", float(c), domain_start=float(domain_start))

    @classmethod
    def power_law(cls, c, r, domain_start):
        return cls("power", float(c), power=float(r), domain_start=float(domain_start))

    @classmethod
    def power_log(cls, c, r, domain_start):
        return cls("power_log", float(c), power=float(r), domain_start=float(domain_start))

    @classmethod
    def exponential(cls, c, a, domain_start=0.0, t_ref=0.0):
        return cls("exponential", float(c), rate=float(a), t_ref=float(t_ref),
                   domain_start=float(domain_start))

    def with_domain(self, t0):
        return replace(self, domain_start=float(t0))

    # evaluation -------------------------------------------------------------
    def value(self, t):
        t = np.asarray(t, dtype=float)
        if self.family == "constant":
            return np.full_like(t, self.coef)
        if self.family == "power":
            return self.coef * t ** self.power
        if self.family == "power_log":
            return self.coef * t ** self.power * np.log(t)
        return self.coef * np.exp(self.rate * (t - self.t_ref))

    __call__ = value

    def log_derivative(self, t):
        """``derivative(t) / value(t)``."""
        t = np.asarray(t, dtype=float)
        if self.family == "constant":
            return np.zeros_like(t)
        if self.family == "power":
            return self.power / t
        if self.family == "power_log":
            return self.power / t + 1.0 / (t * np.log(t))
        return np.full_like(t, self.rate)

    def derivative(self, t):
        return self.value(t) * self.log_derivative(t)

    def integral(self, lo, hi):
        """Closed-form ``int_lo^hi value(s) ds`` (arrays broadcast)."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        c, r, a = self.coef, self.power, self.rate
        if self.family == "constant" or (self.family == "power" and r == 0):
            return c * (hi - lo)
        if self.family == "power":
            if r == -1:
                return c * np.log(hi / lo)
            return c * (hi ** (r + 1) - lo ** (r + 1)) / (r + 1)
        if self.family == "power_log":
            if r == -1:
                return 0.5 * c * (np.log(hi) ** 2 - np.log(lo) ** 2)

            def F(u):
                return u ** (r + 1) * (np.log(u) / (r + 1) - 1.0 / (r + 1) ** 2)

            return c * (F(hi) - F(lo))
        if self.family == "exponential":
            if a == 0:
                return c * (hi - lo)
            return c / a * (np.exp(a * (hi - self.t_ref)) - np.exp(a * (lo - self.t_ref)))
        raise UnsupportedScheduleError(f"no closed-form integral for {self.family}")

    # analytic queries on [domain_start, inf) ---------------------------------
    def _log_derivative_candidates(self):
        """Values of the log-derivative at t0, interior critical points, and infinity."""
        t0 = self.domain_start
        if self.family == "constant":
            return [0.0]
        if self.family == "exponential":
            return [self.rate]
        if self.family == "power":
            if self.power == 0:
                return [0.0]
            return [self.power / t0, 0.0]
        r = self.power
        cands = [float(self.log_derivative(t0)), 0.0]
        if r < 0:
            # with u = log t the log-derivative is (r u + 1) e^{-u} / u, whose
            # derivative vanishes where r u^2 + u + 1 = 0
            u_crit = (-1.0 - math.sqrt(1.0 - 4.0 * r)) / (2.0 * r)
            if u_crit > math.log(t0):
                # evaluated in u so huge critical times do not overflow
                cands.append((r * u_crit + 1.0) * math.exp(-u_crit) / u_crit)
        return cands

    def sup_log_derivative(self):
        return max(self._log_derivative_candidates())

    def inf_log_derivative(self):
        return min(self._log_derivative_candidates())

    def limit_log_derivative(self):
        return self.rate if self.family == "exponential" else 0.0

    def is_nondecreasing(self):
        if self.family in ("constant",):
            return True
        if self.family == "exponential":
            return self.rate >= 0
        return self.power >= 0

    def critical_times(self):
        """Interior times where the log-derivative changes monotonicity."""
        if self.family == "power_log" and self.power < 0:
            r = self.power
            u_crit = (-1.0 - math.sqrt(1.0 - 4.0 * r)) / (2.0 * r)
            if math.log(self.domain_start) < u_crit < 700.0:
                return [math.exp(u_crit)]
        return []

    def growth_signature(self):
        """(rate, power, log power): two schedules have a finite positive ratio
        limit iff their signatures agree, in which case the ratio is constant."""
        k = 1 if self.family == "power_log" else 0
        return (self.rate, self.power, k)

    def coef_at_reference(self):
        """Coefficient with the exponential shift folded in (value = this * t^r ...)."""
        if self.family == "exponential":
            return self.coef * math.exp(-self.rate * self.t_ref)
        return self.coef

    def square_integrable(self, weight_power=0.0):
        """Whether ``int_t0^inf t**weight_power * value(t)**2 dt`` is finite."""
        if self.family == "exponential":
            return self.rate < 0
        if self.family == "constant":
            return False
        if self.domain_start <= 0 and weight_power + 2 * self.power <= -1:
            return False
        return weight_power + 2 * self.power < -1

    def to_dict(self):
        out = {"family": self.family, "coef": self.coef}
        if self.family in ("power", "power_log"):
            out["power"] = self.power
        if self.family == "exponential":
            out["rate"] = self.rate
            out["t_ref"] = self.t_ref
        return out


@dataclass(frozen=True, eq=False)
class DiffusionSchedule:
    """Noise coefficient ``multiplier(t) * operator``, zero when multiplier is None.

    ``cutoff`` switches the noise off for ``t > cutoff``.
    """

    multiplier: Optional[ScalarSchedule] = None
    operator: Optional[np.ndarray] = None
    cutoff: Optional[float] = None

    def __post_init__(self):
        if self.operator is not None:
            op = np.array(self.operator, dtype=float)
            if op.ndim != 2 or op.shape[0] != op.shape[1]:
                raise InvalidScheduleError("diffusion operator must be a square matrix")
            op.setflags(write=False)
            object.__setattr__(self, "operator", op)

    @classmethod
    def zero(cls):
        return cls(None)

    @property
    def is_zero(self):
        return self.multiplier is None

    def operator_norm_hs(self, dim=None):
        if self.operator is None:
            if dim is None:
                raise InvalidScheduleError("identity operator needs a dimension")
            return math.sqrt(dim)
        return float(np.linalg.norm(self.operator))

    def scalar(self, t):
        t = np.asarray(t, dtype=float)
        if self.multiplier is None:
            return np.zeros_like(t)
        v = self.multiplier.value(t)
        if self.cutoff is not None:
            v = np.where(t <= self.cutoff, v, 0.0)
        return v

    def matrix(self, t, dim):
        op = np.eye(dim) if self.operator is None else self.operator
        return float(self.scalar(t)) * op

    def hs_norm(self, t, dim=None):
        return self.scalar(t) * self.operator_norm_hs(dim)

    def apply(self, t, dw):
        """Diffusion increments ``sigma(t_i) dW_i`` for ``dw`` of shape (k, ..., d)."""
        s = self.scalar(t).reshape((-1,) + (1,) * (dw.ndim - 1))
        if self.operator is not None:
            dw = dw @ self.operator.T
        return s * dw

    def square_integrable(self):
        return self.weighted_square_integrable(0.0)

    def weighted_square_integrable(self, weight_power):
        """Finite ``int t**weight_power * hs_norm(t)**2 dt`` over the schedule domain."""
        if self.multiplier is None or self.cutoff is not None:
            return True
        return self.multiplier.square_integrable(weight_power)

    def to_dict(self):
        return {
            "multiplier": None if self.multiplier is None else self.multiplier.to_dict(),
            "operator": None if self.operator is None else self.operator.tolist(),
            "cutoff": self.cutoff,
        }
