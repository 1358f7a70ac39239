"""Catalog of convex objectives and monotone operators with known solutions.

Every callable on a problem accepts arrays of shape ``(..., dim)`` and maps the
last axis, so the integrators can push a whole batch of paths through one call.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .errors import InvalidProblemError

Array = np.ndarray


@dataclass(frozen=True, eq=False)
class ObjectiveProblem:
    dim: int
    eval: Callable[[Array], Array]
    grad: Callable[[Array], Array]
    lipschitz_grad: float
    inf_value: float
    minimizer: Array
    argmin_distance: Callable[[Array], Array]
    name: str = "objective"
    linear_map: Optional[Array] = None

    kind = "objective"

    @property
    def solution(self):
        return self.minimizer

    @property
    def field(self):
        return self.grad

    def distance(self, x):
        return self.argmin_distance(x)


@dataclass(frozen=True, eq=False)
class MonotoneProblem:
    dim: int
    eval: Callable[[Array], Array]
    lipschitz: float
    zero: Array
    zer_distance: Callable[[Array], Array]
    name: str = "operator"
    linear_map: Optional[Array] = None

    kind = "operator"

    @property
    def solution(self):
        return self.zero

    @property
    def field(self):
        return self.eval

    def distance(self, x):
        return self.zer_distance(x)


Problem = Union[ObjectiveProblem, MonotoneProblem]


def _as_vector(x, name):
    v = np.array(x, dtype=float).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise InvalidProblemError(f"{name} must be finite")
    v.setflags(write=False)
    return v


def _frozen_matrix(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def make_quadratic(spectrum, minimizer=None):
    """Separable quadratic ``f(x) = 1/2 sum_i q_i (x_i - y*_i)^2``.

    Zero curvature is rejected so the minimizer is unique and the distance to
    the solution set is exactly ``|x - y*|``.
    """
    q = _as_vector(spectrum, "spectrum")
    if q.size == 0:
        raise InvalidProblemError("spectrum must be nonempty")
    if np.any(q <= 0):
        raise InvalidProblemError(f"spectrum entries must be positive, got {q.tolist()}")
    ystar = np.zeros_like(q) if minimizer is None else _as_vector(minimizer, "minimizer")
    if ystar.shape != q.shape:
        raise InvalidProblemError(
            f"minimizer has dimension {ystar.size}, spectrum has {q.size}")

    def f(x):
        r = np.asarray(x) - ystar
        return 0.5 * np.sum(q * r * r, axis=-1)

    def grad(x):
        return (x - ystar) * q

    def dist(x):
        return np.linalg.norm(np.asarray(x) - ystar, axis=-1)

    return ObjectiveProblem(
        dim=q.size, eval=f, grad=grad, lipschitz_grad=float(q.max()), inf_value=0.0,
        minimizer=ystar, argmin_distance=dist, name="quadratic",
        linear_map=_frozen_matrix(np.diag(q)))


_ROT_SIGN = np.array([-1.0, 1.0])


def make_rotation():
    """Counterclockwise rotation by pi/2 in R^2: monotone, never cocoercive."""
    zero = _as_vector([0.0, 0.0], "zero")

    def V(x):
        return np.asarray(x)[..., ::-1] * _ROT_SIGN

    def dist(x):
        return np.linalg.norm(x, axis=-1)

    return MonotoneProblem(dim=2, eval=V, lipschitz=1.0, zero=zero, zer_distance=dist,
                           name="rotation",
                           linear_map=_frozen_matrix([[0.0, -1.0], [1.0, 0.0]]))


def make_bilinear_saddle(coupling):
    """Saddle operator of ``Phi(x, y) = <x, A y>``, i.e. ``V(x, y) = (A y, -A^T x)``."""
    A = np.array(coupling, dtype=float)
    if A.ndim != 2 or A.size == 0:
        raise InvalidProblemError("coupling must be a nonempty 2-D matrix")
    if not np.all(np.isfinite(A)):
        raise InvalidProblemError("coupling must be finite")
    m, n = A.shape
    A.setflags(write=False)
    AT = A.T.copy()
    U, s, Vt = np.linalg.svd(A)
    rank = int(np.sum(s > s.max() * max(m, n) * np.finfo(float).eps)) if s.size else 0
    # zer V = ker(A^T) x ker(A); distance is the norm of the component in
    # range(A) x range(A^T).
    range_A = U[:, :rank]
    range_AT = Vt[:rank].T

    def V(z):
        z = np.asarray(z)
        x, y = z[..., :m], z[..., m:]
        return np.concatenate((y @ AT, -(x @ A)), axis=-1)

    def dist(z):
        z = np.asarray(z)
        px = z[..., :m] @ range_A
        py = z[..., m:] @ range_AT
        return np.sqrt(np.sum(px * px, axis=-1) + np.sum(py * py, axis=-1))

    return MonotoneProblem(dim=m + n, eval=V, lipschitz=float(s.max()),
                           zero=_as_vector(np.zeros(m + n), "zero"), zer_distance=dist,
                           name="bilinear_saddle",
                           linear_map=_frozen_matrix(np.block(
                               [[np.zeros((m, m)), A], [-AT, np.zeros((n, n))]])))


def gradient_as_operator(p):
    return MonotoneProblem(dim=p.dim, eval=p.grad, lipschitz=p.lipschitz_grad,
                           zero=p.minimizer, zer_distance=p.argmin_distance,
                           name=f"grad_{p.name}", linear_map=p.linear_map)


@dataclass(frozen=True)
class VerificationReport:
    kind: str
    samples: int
    radius: float
    seed: int
    max_structure_violation: float
    max_lipschitz_violation: float
    tolerance: float = 1e-8
    details: dict = field(default_factory=dict)

    @property
    def passed(self):
        return (self.max_structure_violation <= self.tolerance
                and self.max_lipschitz_violation <= self.tolerance)

    def to_dict(self):
        return {
            "name": f"verify_{self.kind}",
            "kind": self.kind,
            "samples": self.samples,
            "radius": self.radius,
            "seed": self.seed,
            "max_structure_violation": self.max_structure_violation,
            "max_lipschitz_violation": self.max_lipschitz_violation,
            "tolerance": self.tolerance,
            "pass": self.passed,
            **self.details,
        }


def _ball_samples(rng, n, dim, radius, center):
    g = rng.standard_normal((n, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / dim)
    return center + g * r[:, None]


def verify_problem(p, samples=1000, radius=1.0, seed=0):
    """Check convexity (or monotonicity) and the Lipschitz bound on random pairs.

    Pairs are drawn uniformly from the ball of ``radius`` around the designated
    solution. Violations are reported as nonnegative slacks.
    """
    if samples < 1:
        raise InvalidProblemError("samples must be >= 1")
    if radius <= 0:
        raise InvalidProblemError("radius must be positive")
    rng = np.random.default_rng(seed)
    x = _ball_samples(rng, samples, p.dim, radius, p.solution)
    y = _ball_samples(rng, samples, p.dim, radius, p.solution)
    dxy = np.linalg.norm(y - x, axis=1)
    if p.kind == "objective":
        fx, fy = p.eval(x), p.eval(y)
        gx, gy = p.grad(x), p.grad(y)
        structure = fx + np.sum(gx * (y - x), axis=1) - fy
        lip = p.lipschitz_grad
    else:
        gx, gy = p.eval(x), p.eval(y)
        structure = -np.sum((gy - gx) * (y - x), axis=1)
        lip = p.lipschitz
    lip_slack = np.linalg.norm(gy - gx, axis=1) - lip * dxy
    return VerificationReport(
        kind="convexity" if p.kind == "objective" else "monotonicity",
        samples=int(samples), radius=float(radius), seed=int(seed),
        max_structure_violation=float(max(0.0, structure.max())),
        max_lipschitz_violation=float(max(0.0, lip_slack.max())),
    )
