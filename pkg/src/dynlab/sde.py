"""Brownian paths and explicit integrators for the systems in ``dynamics``.

The inner loops work on precomputed coefficient arrays and pre-scaled noise so
that one Python iteration costs a handful of small numpy operations. A batch of
paths is integrated as one ``(P, 2d)`` state array; every operation is
elementwise over the path axis, so path ``j`` of a batch is bit-identical to the
single-path integration with the same seed.
"""

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .errors import DivergenceError, InvalidGridError, InvalidInputError

DIVERGENCE_THRESHOLD = 1e12
CHUNK = 4096
BATCH_SIZE = 128


class StabilityWarning(UserWarning):
    pass


def uniform_grid(t_start, horizon, step):
    """Uniform grid from ``t_start`` to ``t_start + horizon``; the step must divide
    the horizon up to rounding."""
    if step <= 0 or horizon <= 0:
        raise InvalidGridError("step and horizon must be positive")
    n = int(round(horizon / step))
    if n < 1 or abs(n * step - horizon) > 1e-9 * max(1.0, horizon):
        raise InvalidGridError(f"step {step} does not divide horizon {horizon}")
    return t_start + step * np.arange(n + 1, dtype=float)


def _check_grid(grid):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise InvalidGridError("grid needs at least two points")
    if not np.all(np.isfinite(grid)) or np.any(np.diff(grid) <= 0):
        raise InvalidGridError("grid must be finite and strictly increasing")
    return grid


def is_uniform(grid, rtol=1e-9):
    dt = np.diff(grid)
    return bool(np.all(np.abs(dt - dt[0]) <= rtol * abs(dt[0]) * max(1.0, len(dt) ** 0.5)))


@dataclass(frozen=True, eq=False)
class BrownianPath:
    seed: Optional[int]
    grid: np.ndarray
    increments: np.ndarray

    @property
    def dim(self):
        return self.increments.shape[1]

    @property
    def n_steps(self):
        return self.increments.shape[0]

    def values(self):
        """W(t_i) with W(t_0) = 0."""
        return np.vstack((np.zeros((1, self.dim)), np.cumsum(self.increments, axis=0)))

    def scaled(self, c):
        return BrownianPath(self.seed, self.grid, c * self.increments)


def _normals(seed, n, dim, chunk=CHUNK):
    """Standard normals for ``seed``, drawn chunk by chunk from one generator.

    Drawing in chunks yields the same stream as a single ``(n, dim)`` draw.
    """
    rng = np.random.default_rng(seed)
    for lo in range(0, n, chunk):
        yield lo, rng.standard_normal((min(chunk, n - lo), dim))


def sample_brownian(seed, grid, dim):
    grid = _check_grid(grid)
    if dim < 1:
        raise InvalidInputError("dim must be >= 1")
    z = np.random.default_rng(seed).standard_normal((grid.size - 1, dim))
    inc = np.sqrt(np.diff(grid))[:, None] * z
    inc.setflags(write=False)
    return BrownianPath(int(seed), grid, inc)


def zero_path(grid, dim):
    grid = _check_grid(grid)
    return BrownianPath(None, grid, np.zeros((grid.size - 1, dim)))


def coarsen_path(path, factor):
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise InvalidInputError("factor must be a positive integer")
    if path.n_steps % factor:
        raise InvalidInputError(f"factor {factor} does not divide {path.n_steps} steps")
    if factor == 1:
        return path
    if not is_uniform(path.grid):
        raise InvalidInputError("coarsening needs a uniform grid")
    inc = path.increments.reshape(-1, factor, path.dim).sum(axis=1)
    return BrownianPath(path.seed, path.grid[::factor].copy(), inc)


@dataclass(frozen=True, eq=False)
class Trajectory:
    variant: str
    grid: np.ndarray
    states: np.ndarray
    spec: object = field(repr=False)

    @property
    def dim(self):
        return self.states.shape[-1] // 2

    @property
    def positions(self):
        return self.states[..., :self.dim]

    @property
    def companions(self):
        return self.states[..., self.dim:]

    def to_csv(self, path):
        d = self.dim
        header = ",".join(["t"] + [f"y_{i + 1}" for i in range(d)]
                          + [f"c_{i + 1}" for i in range(d)])
        np.savetxt(path, np.column_stack((self.grid, self.states)), fmt="%.17g",
                   delimiter=",", header=header, comments="")


@dataclass(frozen=True, eq=False)
class BatchTrajectory:
    """Recorded states of shape (n_records, n_paths, 2d); diverged paths are zeroed
    from their first bad step on and listed in ``diverged``."""

    variant: str
    grid: np.ndarray
    states: np.ndarray
    seeds: Tuple[int, ...]
    diverged: dict
    spec: object = field(repr=False)

    @property
    def n_paths(self):
        return self.states.shape[1]

    @property
    def ok(self):
        bad = set(self.diverged)
        return np.array([s not in bad for s in self.seeds])

    def path(self, j):
        return Trajectory(self.variant, self.grid, self.states[:, j, :], self.spec)


# ---------------------------------------------------------------------------
# stability guidance

def stability_hint(spec, times=None):
    """Largest explicit step that the linearised system at ``times`` tolerates.

    With q the largest curvature (Lipschitz constant), the unified drift has
    frequency w^2 = |k| q and damping ``damp``; forward Euler on a damped
    oscillator needs h < damp / w^2 in addition to resolving the frequency.
    """
    p = spec.problem
    L = p.lipschitz_grad if p.kind == "objective" else p.lipschitz
    if times is None:
        times = (spec.t_start, spec.t_end)
    m, damp, k = (np.abs(c) for c in spec.coefficients(np.asarray(times, float)))
    bounds = []
    for mi, di, ki in zip(m, damp, k):
        w2 = ki * L
        if w2 > 0:
            bounds.append(0.5 / math.sqrt(w2))
            if di > 0:
                bounds.append(di / w2)
        if di > 0:
            bounds.append(1.0 / di)
        if mi * L > 0:
            bounds.append(1.0 / (mi * L))
    return min(bounds) if bounds else math.inf


def _warn_step(spec, grid):
    h = float(np.max(np.diff(grid)))
    hint = stability_hint(spec, (grid[0], grid[-1]))
    if h > hint:
        warnings.warn(f"step {h:.3g} exceeds the stability hint {hint:.3g}",
                      StabilityWarning, stacklevel=3)


# ---------------------------------------------------------------------------
# Euler-Maruyama

def _record_indices(n_steps, record_every):
    if record_every < 1:
        raise InvalidInputError("record_every must be >= 1")
    idx = np.arange(0, n_steps + 1, record_every)
    if idx[-1] != n_steps:
        idx = np.append(idx, n_steps)
    return idx


def _step_matrices(h, m, damp, k, A):
    """Transposed EM transition matrices ``I + h J_i`` of a linear field, so that
    the deviation row vector updates as ``e @ T[i]``."""
    d = A.shape[0]
    eye = np.eye(d)
    T = np.empty((h.size, 2 * d, 2 * d))
    T[:, :d, :d] = eye - (h * m)[:, None, None] * A
    T[:, :d, d:] = h[:, None, None] * eye
    T[:, d:, :d] = (h * k)[:, None, None] * A
    T[:, d:, d:] = (1.0 - h * damp)[:, None, None] * eye
    return np.ascontiguousarray(T.transpose(0, 2, 1))


def _em_core(spec, grid, state0, noise_chunks, record_every, on_chunk=None):
    """Shared EM loop. ``state0`` has shape (..., 2d); ``noise_chunks`` yields
    (lo, array of shape (n, ..., d)) holding sigma(t_i) dW_i already scaled.

    Problems with a ``linear_map`` are stepped as one small matrix product on
    the deviation from the stationary state; other fields go through the
    generic drift. Returns (record_idx, records, bad) where ``bad`` maps a path
    index to the first grid index where it exceeded the threshold or became
    non-finite.

    ``on_chunk(lo, before, noise)`` sees the states *before* each step of a
    chunk, shape (cnt, ..., 2d), with the scaled noise applied at those steps.
    """
    d = spec.dim
    n = grid.size - 1
    h = np.diff(grid)
    m, damp, k = spec.coefficients(grid[:-1])
    field_fn = spec.problem.field
    A = getattr(spec.problem, "linear_map", None)
    rec_idx = _record_indices(n, record_every)
    records = np.empty((rec_idx.size,) + state0.shape)
    records[0] = state0
    next_rec = 1
    batch = state0.ndim == 2
    alive = np.ones(state0.shape[0], bool) if batch else None
    bad = {}
    noisy = not spec.diffusion.is_zero
    last = state0.copy()
    if A is not None:
        shift = spec.stationary_state
        e = state0 - shift
    else:
        pos = state0[..., :d].copy()
        comp = state0[..., d:].copy()
        use_m = bool(np.any(m != 0))
        # fused per-step coefficients as Python floats (cheaper scalar access)
        hs = h.tolist()
        hm = (h * m).tolist()
        hk = (h * k).tolist()
        keep = (1.0 - h * damp).tolist()
        tmp = np.empty_like(pos)
    with np.errstate(all="ignore"):
        for lo, noise in noise_chunks:
            cnt = noise.shape[0]
            if A is not None:
                T = _step_matrices(h[lo:lo + cnt], m[lo:lo + cnt], damp[lo:lo + cnt],
                                   k[lo:lo + cnt], A)
                buf = np.empty((cnt,) + e.shape)
                for j in range(cnt):
                    x = buf[j]
                    np.dot(e, T[j], out=x)
                    if noisy:
                        x[..., d:] += noise[j]
                    e = x
                full = buf + shift
            else:
                # fresh buffers each chunk so the carried state never aliases a row
                buf_pos = np.empty((cnt,) + pos.shape)
                buf_comp = np.empty((cnt,) + comp.shape)
                for j in range(cnt):
                    i = lo + j
                    bp = buf_pos[j]
                    bc = buf_comp[j]
                    v = field_fn(pos)
                    np.multiply(comp, hs[i], out=bp)
                    bp += pos
                    if use_m:
                        np.multiply(v, hm[i], out=tmp)
                        bp -= tmp
                    np.multiply(comp, keep[i], out=bc)
                    np.multiply(v, hk[i], out=tmp)
                    bc += tmp
                    if noisy:
                        bc += noise[j]
                    pos = bp
                    comp = bc
                full = np.concatenate((buf_pos, buf_comp), axis=-1)
            # divergence scan over the chunk just integrated
            flag = ~(np.abs(full).max(axis=-1) <= DIVERGENCE_THRESHOLD)
            if batch:
                flag[:, ~alive] = False
            if flag.any():
                if not batch:
                    first = int(np.argmax(flag))
                    raise DivergenceError(lo + first + 1, float(grid[lo + first + 1]),
                                          float(np.linalg.norm(full[first])))
                for c in np.nonzero(flag.any(axis=0))[0]:
                    bad[int(c)] = lo + int(np.argmax(flag[:, c])) + 1
                    alive[c] = False
            if batch and not alive.all():
                # dead paths are pinned at zero from their first bad step on
                for c, i_bad in bad.items():
                    full[max(0, i_bad - lo - 1):, c] = 0.0
                if A is not None:
                    e[~alive] = -shift
                else:
                    pos[~alive] = 0.0
                    comp[~alive] = 0.0
            while next_rec < rec_idx.size and rec_idx[next_rec] <= lo + cnt:
                records[next_rec] = full[rec_idx[next_rec] - lo - 1]
                next_rec += 1
            if on_chunk is not None:
                on_chunk(lo, np.concatenate((last[None], full[:-1])), noise)
            last = full[-1]
    return rec_idx, records, bad


def _scaled_noise(spec, grid, increments, chunk=CHUNK):
    """Chunks of sigma(t_i) dW_i from a full increment array (n, [P,] d)."""
    n = grid.size - 1
    diff = spec.diffusion
    if diff.is_zero:
        zero = np.zeros((min(chunk, n),) + increments.shape[1:])
        for lo in range(0, n, chunk):
            yield lo, zero[:min(chunk, n - lo)]
        return
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        yield lo, diff.apply(grid[lo:hi], increments[lo:hi])


def integrate_em(spec, path, record_every=1, check_stability=True):
    """Euler-Maruyama along a given Brownian path."""
    grid = path.grid
    if path.dim != spec.dim:
        raise InvalidInputError(f"path dimension {path.dim} != problem dimension {spec.dim}")
    _check_span(spec, grid)
    if check_stability:
        _warn_step(spec, grid)
    state0 = spec.initial_state.astype(float)
    idx, rec, _ = _em_core(spec, grid, state0, _scaled_noise(spec, grid, path.increments),
                           record_every)
    return Trajectory(spec.variant.value, grid[idx], rec, spec)


def _check_span(spec, grid):
    tol = 1e-9 * max(1.0, abs(spec.t_end))
    if abs(grid[0] - spec.t_start) > tol or abs(grid[-1] - spec.t_end) > tol:
        raise InvalidGridError(
            f"grid spans [{grid[0]}, {grid[-1]}], spec needs [{spec.t_start}, {spec.t_end}]")


def _batch_noise(spec, grid, seeds, chunk=CHUNK):
    """Per-seed streams, each identical to ``sample_brownian(seed, grid, d)``."""
    n = grid.size - 1
    d = spec.dim
    sq = np.sqrt(np.diff(grid))
    streams = [_normals(s, n, d, chunk) for s in seeds]
    for lo in range(0, n, chunk):
        z = np.stack([next(g)[1] for g in streams], axis=1)
        hi = lo + z.shape[0]
        yield lo, spec.diffusion.apply(grid[lo:hi], sq[lo:hi, None, None] * z)


def thread_count():
    raw = os.environ.get("DYNLAB_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise InvalidInputError(f"DYNLAB_THREADS must be an integer, got {raw!r}")
    if n < 0:
        raise InvalidInputError("DYNLAB_THREADS must be >= 0")
    return n if n > 0 else (os.cpu_count() or 1)


def _integrate_batch(spec, grid, seeds, record_every, on_chunk=None):
    state0 = np.tile(spec.initial_state.astype(float), (len(seeds), 1))
    if spec.diffusion.is_zero:
        noise = _scaled_noise(spec, grid, np.zeros((grid.size - 1, len(seeds), spec.dim)))
    else:
        noise = _batch_noise(spec, grid, seeds)
    return _em_core(spec, grid, state0, noise, record_every, on_chunk)


def integrate_em_batch(spec, grid, seeds, record_every=1, check_stability=True,
                       on_chunk=None):
    """Integrate one path per seed; path ``j`` equals
    ``integrate_em(spec, sample_brownian(seeds[j], grid, d))``.

    Seeds are split into fixed-size batches that may run on worker threads
    (``DYNLAB_THREADS``); results are merged in seed order. ``on_chunk``, if
    given, is called as ``on_chunk(first_path, lo, before, noise)`` where
    ``first_path`` is the offset of the batch within ``seeds``.
    """
    grid = _check_grid(grid)
    _check_span(spec, grid)
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise InvalidInputError("need at least one seed")
    if check_stability:
        _warn_step(spec, grid)
    offsets = range(0, len(seeds), BATCH_SIZE)

    def run(off):
        hook = None
        if on_chunk is not None:
            def hook(lo, before, noise):
                on_chunk(off, lo, before, noise)
        return _integrate_batch(spec, grid, seeds[off:off + BATCH_SIZE], record_every, hook)

    workers = min(thread_count(), len(offsets))
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(run, offsets))
    else:
        results = [run(off) for off in offsets]
    idx = results[0][0]
    states = np.concatenate([r[1] for r in results], axis=1)
    diverged = {}
    for off, (_, _, bad) in zip(offsets, results):
        for j, i in sorted(bad.items()):
            diverged[seeds[off + j]] = (int(i), float(grid[i]))
    return BatchTrajectory(spec.variant.value, grid[idx], states, seeds, diverged, spec)


# ---------------------------------------------------------------------------
# RK4 for the zero-noise ODE

def integrate_rk4(spec, grid, record_every=1):
    if not spec.diffusion.is_zero:
        raise InvalidInputError("integrate_rk4 needs identically zero diffusion")
    grid = _check_grid(grid)
    _check_span(spec, grid)
    n = grid.size - 1
    h = np.diff(grid)
    t = grid[:-1]
    c0 = spec.coefficients(t)
    c1 = spec.coefficients(t + 0.5 * h)
    c2 = spec.coefficients(grid[1:])
    f = spec.drift_with
    idx = _record_indices(n, record_every)
    rec = np.empty((idx.size, 2 * spec.dim))
    y = spec.initial_state.astype(float)
    rec[0] = y
    r = 1
    with np.errstate(all="ignore"):
        for i in range(n):
            hi = h[i]
            a = (c0[0][i], c0[1][i], c0[2][i])
            b = (c1[0][i], c1[1][i], c1[2][i])
            c = (c2[0][i], c2[1][i], c2[2][i])
            k1 = f(*a, y)
            k2 = f(*b, y + 0.5 * hi * k1)
            k3 = f(*b, y + 0.5 * hi * k2)
            k4 = f(*c, y + hi * k3)
            y = y + (hi / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            mag = np.abs(y).max()
            if not mag <= DIVERGENCE_THRESHOLD:
                raise DivergenceError(i + 1, float(grid[i + 1]), float(np.linalg.norm(y)))
            if r < idx.size and idx[r] == i + 1:
                rec[r] = y
                r += 1
    return Trajectory(spec.variant.value, grid[idx], rec, spec)
