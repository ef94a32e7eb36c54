"""Euler-Maruyama path ensembles with per-path reproducible noise."""
from __future__ import annotations

import io
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .errors import EvaluationError, InputError
from .rng import NoiseSource, chunk_steps

log = logging.getLogger(__name__)

Array = np.ndarray


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise InputError("dt must be positive and finite")
        if int(self.n_steps) < 1:
            raise InputError("n_steps must be >= 1")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @classmethod
    def from_horizon(cls, horizon: float, dt: float, t0: float = 0.0) -> "TimeGrid":
        n = int(round((horizon - t0) / dt))
        return cls(t0, dt, n)

    @property
    def horizon(self) -> float:
        return self.t0 + self.dt * self.n_steps

    def step_of(self, t: float) -> int:
        k = int(round((t - self.t0) / self.dt))
        if k < 0 or k > self.n_steps or abs(self.t0 + k * self.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise InputError(f"time {t} is not on the grid")
        return k


@dataclass(frozen=True)
class PathEnsemble:
    """Recorded states of N paths, every ``record_every`` grid steps.

    ``states[i, j]`` is path ``i`` at step ``j * record_every``.  ``integrals``
    holds running time integrals of named observables at the same records.
    Diverged paths carry NaN from the first non-finite step on.
    """

    grid: TimeGrid
    dim: int
    states: Array
    root_seed: int
    stream_indices: Array
    diverged: Array
    record_every: int = 1
    integrals: Mapping[str, Array] = field(default_factory=dict)

    def __post_init__(self):
        for a in (self.states, self.stream_indices, self.diverged, *self.integrals.values()):
            a.setflags(write=False)

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def record_steps(self) -> Array:
        return np.arange(self.states.shape[1]) * self.record_every

    @property
    def times(self) -> Array:
        return self.grid.t0 + self.record_steps * self.grid.dt

    def record_index(self, t: float) -> int:
        k = self.grid.step_of(t)
        if k % self.record_every:
            raise InputError(f"time {t} was not recorded (record_every={self.record_every})")
        return k // self.record_every

    def valid(self) -> Array:
        return ~self.diverged

    def at(self, t: float, valid_only: bool = True) -> Array:
        x = self.states[:, self.record_index(t)]
        return x[self.valid()] if valid_only else x

    def map_states(self, fn: Callable[[Array], Array]) -> "PathEnsemble":
        """Pointwise image of every state (used for push-forwards)."""
        flat = self.states.reshape(-1, self.dim)
        out = np.array(fn(flat), dtype=float).reshape(self.states.shape)
        return PathEnsemble(self.grid, self.dim, out, self.root_seed, self.stream_indices.copy(),
                            self.diverged.copy(), self.record_every, {})


def _initial_states(x0, n_paths: int, dim: int) -> Array:
    if callable(x0):
        x = np.asarray(x0(n_paths), dtype=float)
    else:
        x = np.asarray(x0, dtype=float)
    if x.ndim == 0:
        x = np.full((n_paths, dim), float(x))
    elif x.ndim == 1:
        if x.shape[0] == dim:
            x = np.broadcast_to(x, (n_paths, dim))
        elif dim == 1 and x.shape[0] == n_paths:
            x = x[:, None]
        else:
            raise InputError("x0 shape incompatible with dim/n_paths")
    if x.shape != (n_paths, dim):
        raise InputError(f"x0 has shape {x.shape}, expected {(n_paths, dim)}")
    return np.array(x, dtype=float)


def _em_increment(model, x: Array, dW: Array, dt: float) -> Array:
    both = getattr(model, "drift_and_diffusion", None)
    b, s = both(x) if both is not None else (model.drift(x), model.diffusion(x))
    if x.shape[1] == 1:
        return b * dt + s[:, 0, :] * dW
    return b * dt + np.einsum("nij,nj->ni", s, dW)


def _simulate_block(model, x0: Array, grid: TimeGrid, root_seed: int, streams: Array,
                    record_every: int, observables, rule: str):
    n, d = x0.shape
    n_rec = grid.n_steps // record_every + 1
    states = np.empty((n, n_rec, d))
    states[:, 0] = x0
    acc = {k: np.zeros(n) for k in observables}
    ints = {k: np.zeros((n, n_rec)) for k in observables}
    fprev = {k: f(x0) for k, f in observables.items()}
    diverged = ~np.all(np.isfinite(x0), axis=1)
    noise = NoiseSource(root_seed, streams, d)
    sq = np.sqrt(grid.dt)
    dt = grid.dt
    x = x0.copy()
    step = 0
    rec = 1
    chunk = chunk_steps(n, d)
    with np.errstate(over="ignore", invalid="ignore"):
        while step < grid.n_steps:
            m = min(chunk, grid.n_steps - step)
            z = noise.block(m)
            for j in range(m):
                x = x + _em_increment(model, x, z[j] * sq, dt)
                step += 1
                bad = ~np.all(np.isfinite(x), axis=1)
                if bad.any():
                    new = bad & ~diverged
                    if new.any():
                        diverged |= new
                    x[bad] = np.nan
                for k, f in observables.items():
                    fx = f(x)
                    if rule == "trapezoid":
                        acc[k] += 0.5 * dt * (fprev[k] + fx)
                    else:
                        acc[k] += dt * fprev[k]
                    fprev[k] = fx
                if step % record_every == 0:
                    states[:, rec] = x
                    for k in observables:
                        ints[k][:, rec] = acc[k]
                    rec += 1
    return states, diverged, ints


def simulate(model, x0, grid: TimeGrid, n_paths: int, seed: int, *, record_every: int = 1,
             observables: Optional[Mapping[str, Callable[[Array], Array]]] = None,
             stream_indices: Optional[Array] = None, quadrature: str = "left",
             threads: int = 1) -> PathEnsemble:
    """Euler-Maruyama ensemble ``X_{k+1} = X_k + b dt + sigma dW``.

    ``observables`` maps names to ``f: (n, d) -> (n,)``; their running time
    integrals are accumulated on the fly (left Riemann or trapezoid), so long
    runs can be stored thinned.  ``stream_indices`` (default ``0..N-1``) picks
    the noise stream of each path; repeated indices share noise.
    """
    if n_paths < 1:
        raise InputError("n_paths must be >= 1")
    if record_every < 1 or grid.n_steps % record_every:
        raise InputError("record_every must divide n_steps")
    if quadrature not in ("left", "trapezoid"):
        raise InputError("quadrature must be 'left' or 'trapezoid'")
    dim = model.dim
    x0a = _initial_states(x0, n_paths, dim)
    streams = np.arange(n_paths, dtype=np.int64) if stream_indices is None \
        else np.asarray(stream_indices, dtype=np.int64)
    if streams.shape != (n_paths,):
        raise InputError("stream_indices must have length n_paths")
    obs = dict(observables or {})

    threads = max(1, int(threads))
    if threads == 1 or n_paths < 2 * threads:
        states, div, ints = _simulate_block(model, x0a, grid, seed, streams, record_every, obs,
                                            quadrature)
    else:
        cuts = np.linspace(0, n_paths, threads + 1).astype(int)
        parts = [(cuts[i], cuts[i + 1]) for i in range(threads)]
        with ThreadPoolExecutor(threads) as ex:
            res = list(ex.map(lambda p: _simulate_block(model, x0a[p[0]:p[1]], grid, seed,
                                                        streams[p[0]:p[1]], record_every, obs,
                                                        quadrature), parts))
        states = np.concatenate([r[0] for r in res])
        div = np.concatenate([r[1] for r in res])
        ints = {k: np.concatenate([r[2][k] for r in res]) for k in obs}
    if div.any():
        log.warning("%d of %d paths diverged", int(div.sum()), n_paths)
    return PathEnsemble(grid, dim, states, int(seed), streams, div, record_every, ints)


# --------------------------------------------------------------------------
# moments


@dataclass(frozen=True)
class MomentEstimate:
    order: float
    time_points: Array
    values: Array
    se: Array
    sup_estimate: float
    n_excluded: int = 0


def jackknife_mean_se(v: Array) -> tuple[float, float]:
    """Mean and leave-one-out jackknife standard error."""
    v = np.asarray(v, dtype=float)
    n = v.size
    m = float(v.mean())
    if n < 2:
        return m, 0.0
    loo = (v.sum() - v) / (n - 1)
    se = np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    return m, float(se)


def _valid_states(ensemble: PathEnsemble) -> Array:
    n_bad = int(ensemble.diverged.sum())
    if n_bad:
        log.warning("excluding %d diverged paths", n_bad)
    if n_bad == ensemble.n_paths:
        raise EvaluationError("every path diverged")
    return ensemble.states[ensemble.valid()]


def estimate_moments(ensemble: PathEnsemble, p: float, time_points) -> MomentEstimate:
    if p < 1:
        raise InputError("moment order must be >= 1")
    states = _valid_states(ensemble)
    tp = np.asarray(time_points, dtype=float)
    vals, ses = [], []
    for t in tp:
        j = ensemble.record_index(float(t))
        v = np.linalg.norm(states[:, j], axis=1) ** p
        m, s = jackknife_mean_se(v)
        vals.append(m)
        ses.append(s)
    vals = np.array(vals)
    return MomentEstimate(p, tp, vals, np.array(ses), float(vals.max()),
                          int(ensemble.diverged.sum()))


def estimate_running_sup(ensemble: PathEnsemble, p: float, window_start: float,
                         window_end: float, with_se: bool = False):
    """E sup over recorded grid points in [window_start, window_end] of |X|^p."""
    if window_start < ensemble.grid.t0 or window_end > ensemble.grid.horizon + 1e-12 \
            or window_end < window_start:
        raise InputError("window outside grid horizon")
    t = ensemble.times
    sel = (t >= window_start - 1e-12) & (t <= window_end + 1e-12)
    states = _valid_states(ensemble)
    v = np.max(np.linalg.norm(states[:, sel], axis=2) ** p, axis=1)
    m, s = jackknife_mean_se(v)
    return (m, s) if with_se else m


# --------------------------------------------------------------------------
# serialization

_MAGIC = b"SDEPATH1"


def ensemble_to_csv(ensemble: PathEnsemble, path) -> None:
    g = ensemble.grid
    buf = io.StringIO()
    buf.write(f"# dim={ensemble.dim},dt={g.dt!r},nSteps={g.n_steps},nPaths={ensemble.n_paths},"
              f"rootSeed={ensemble.root_seed},recordEvery={ensemble.record_every},t0={g.t0!r}\n")
    buf.write(",".join(["path", "stepIndex", "t"] + [f"x_{k + 1}" for k in range(ensemble.dim)]) + "\n")
    steps = ensemble.record_steps
    times = ensemble.times
    n_rec = steps.size
    cols = [np.repeat(np.arange(ensemble.n_paths), n_rec), np.tile(steps, ensemble.n_paths),
            np.tile(times, ensemble.n_paths)]
    flat = ensemble.states.reshape(-1, ensemble.dim)
    table = np.column_stack(cols + [flat[:, k] for k in range(ensemble.dim)])
    np.savetxt(buf, table, delimiter=",", fmt=["%d", "%d", "%.17g"] + ["%.17g"] * ensemble.dim)
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def ensemble_to_binary(ensemble: PathEnsemble, path) -> None:
    g = ensemble.grid
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<qqqqqdd", ensemble.dim, g.n_steps, ensemble.n_paths,
                             ensemble.root_seed, ensemble.record_every, g.t0, g.dt))
        fh.write(np.ascontiguousarray(ensemble.stream_indices, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(ensemble.diverged, dtype="u1").tobytes())
        fh.write(np.ascontiguousarray(ensemble.states, dtype="<f8").tobytes())


def ensemble_from_binary(path) -> PathEnsemble:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise InputError("not a path-ensemble file")
        dim, n_steps, n_paths, seed, rec, t0, dt = struct.unpack("<qqqqqdd", fh.read(56))
        streams = np.frombuffer(fh.read(8 * n_paths), dtype="<i8").copy()
        div = np.frombuffer(fh.read(n_paths), dtype="u1").astype(bool)
        n_rec = n_steps // rec + 1
        states = np.frombuffer(fh.read(8 * n_paths * n_rec * dim), dtype="<f8").reshape(
            n_paths, n_rec, dim).copy()
    return PathEnsemble(TimeGrid(t0, dt, n_steps), dim, states, seed, streams, div, rec, {})
