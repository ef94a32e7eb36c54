"""Reflection coupling: diffusion splitting, coupled stepping, contraction fits."""
from __future__ import annotations

import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import DomainError, EllipticityError, InputError
from .integrate import TimeGrid, _initial_states
from .rng import NoiseSource, chunk_steps

log = logging.getLogger(__name__)

Array = np.ndarray

CLAMP = 1e-12


@dataclass(frozen=True)
class DiffusionSplit:
    """sigma_tilde(x) with sigma_tilde^2 = sigma sigma^T - I/(2 kappa)."""

    model: object
    kappa: float

    @property
    def dim(self) -> int:
        return self.model.dim

    def sigma_tilde(self, x: Array) -> Array:
        s = self.model.diffusion(x)
        a = s @ np.swapaxes(s, 1, 2)
        shift = 1.0 / (2.0 * self.kappa)
        if a.shape[1] == 1:
            ev = a[:, 0, 0] - shift
            bad = ev < -CLAMP
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise EllipticityError(f"sigma^2 - 1/(2kappa) = {ev[i]:.3g} < 0 at x={x[i]}", x[i])
            return np.sqrt(np.maximum(ev, 0.0))[:, None, None]
        w, v = np.linalg.eigh(a - shift * np.eye(a.shape[1]))
        bad = w[:, 0] < -CLAMP
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise EllipticityError(f"eigenvalue {w[i, 0]:.3g} < 0 at x={x[i]}", x[i])
        w = np.sqrt(np.maximum(w, 0.0))
        return np.einsum("nij,nj,nkj->nik", v, w, v)


def build_diffusion_split(model, kappa: Optional[float] = None) -> DiffusionSplit:
    k = float(model.kappa if kappa is None else kappa)
    if k < 1:
        raise InputError("kappa must be >= 1")
    return DiffusionSplit(model, k)


def reflection_matrix(z) -> Array:
    """I - 2 n n^T with n = z/|z|."""
    z = np.asarray(z, dtype=float).ravel()
    nz = np.linalg.norm(z)
    if not nz > 0:
        raise DomainError("reflection direction must be nonzero")
    n = z / nz
    return np.eye(z.size) - 2.0 * np.outer(n, n)


def quasi_cost(x: Array, y: Array, p: float, theta: float) -> Array:
    """psi_{p,theta}(x,y) = (1 ^ |x-y|^theta)(1 + |x|^p + |y|^p) row-wise."""
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    r = np.linalg.norm(x - y, axis=1)
    w = np.minimum(1.0, r ** theta)
    return w * (1 + np.linalg.norm(x, axis=1) ** p + np.linalg.norm(y, axis=1) ** p)


@dataclass(frozen=True)
class CoupledPair:
    grid: TimeGrid
    record_steps: Array
    y_path: Array
    y_hat_path: Array
    coupling_step_index: Optional[int]
    glued: Array


@dataclass(frozen=True)
class CoupledEnsemble:
    """``y``/``y_hat``: (N, R, d) recorded every ``record_every`` steps.

    ``coupling_step[i]`` is the first grid step at which the pair is glued,
    or -1 when it never was.
    """

    grid: TimeGrid
    dim: int
    y: Array
    y_hat: Array
    coupling_step: Array
    diverged: Array
    record_every: int
    glue_threshold: float
    root_seed: int

    @property
    def n_pairs(self) -> int:
        return self.y.shape[0]

    @property
    def record_steps(self) -> Array:
        return np.arange(self.y.shape[1]) * self.record_every

    @property
    def times(self) -> Array:
        return self.grid.t0 + self.record_steps * self.grid.dt

    @property
    def glued(self) -> Array:
        cs = self.coupling_step[:, None]
        return (cs >= 0) & (cs <= self.record_steps[None, :])

    def record_index(self, t: float) -> int:
        k = self.grid.step_of(t)
        if k % self.record_every:
            raise InputError(f"time {t} was not recorded")
        return k // self.record_every

    def glued_fraction(self, t: Optional[float] = None) -> float:
        k = self.grid.n_steps if t is None else self.grid.step_of(t)
        ok = ~self.diverged
        cs = self.coupling_step[ok]
        return float(np.mean((cs >= 0) & (cs <= k)))

    def pair(self, i: int) -> CoupledPair:
        cs = int(self.coupling_step[i])
        return CoupledPair(self.grid, self.record_steps, self.y[i], self.y_hat[i],
                           None if cs < 0 else cs, self.glued[i])

    def to_csv(self, path) -> None:
        d = self.dim
        n, r = self.y.shape[:2]
        cols = [np.repeat(np.arange(n), r), np.tile(self.record_steps, n),
                np.tile(self.times, n)]
        yf = self.y.reshape(-1, d)
        hf = self.y_hat.reshape(-1, d)
        table = np.column_stack(cols + [yf[:, k] for k in range(d)] + [hf[:, k] for k in range(d)]
                                + [self.glued.ravel().astype(int)])
        head = ["pair", "stepIndex", "t"] + [f"y_{k + 1}" for k in range(d)] \
            + [f"yHat_{k + 1}" for k in range(d)] + ["glued"]
        buf = io.StringIO()
        np.savetxt(buf, table, delimiter=",", header=",".join(head), comments="",
                   fmt=["%d", "%d", "%.17g"] + ["%.17g"] * (2 * d) + ["%d"])
        with open(path, "w") as fh:
            fh.write(buf.getvalue())


def default_glue_threshold(y0, y_hat0) -> float:
    dz = np.linalg.norm(np.atleast_1d(np.asarray(y0, float)) - np.atleast_1d(np.asarray(y_hat0, float)))
    return 1e-4 * (1.0 + float(dz))


def _coupled_block(split: DiffusionSplit, y: Array, yh: Array, grid: TimeGrid, seed: int,
                   streams: Array, thr: float, record_every: int, crossing: bool):
    model = split.model
    n, d = y.shape
    n_rec = grid.n_steps // record_every + 1
    ys = np.empty((n, n_rec, d))
    hs = np.empty((n, n_rec, d))
    c = (2.0 * split.kappa) ** -0.5
    sq = np.sqrt(grid.dt)
    dt = grid.dt
    z = y - yh
    glued = np.linalg.norm(z, axis=1) <= thr
    cstep = np.where(glued, 0, -1).astype(np.int64)
    yh = np.where(glued[:, None], y, yh)
    diverged = np.zeros(n, dtype=bool)
    ys[:, 0], hs[:, 0] = y, yh
    noise = NoiseSource(seed, streams, 2 * d)
    step, rec = 0, 1
    chunk = chunk_steps(n, 2 * d)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        while step < grid.n_steps:
            m = min(chunk, grid.n_steps - step)
            blk = noise.block(m)
            for j in range(m):
                dw = blk[j, :, :d] * sq
                dh = blk[j, :, d:] * sq
                z = y - yh
                if d == 1:
                    ny = y + model.drift(y) * dt + split.sigma_tilde(y)[:, 0, :] * dw + c * dh
                    nh = yh + model.drift(yh) * dt + split.sigma_tilde(yh)[:, 0, :] * dw - c * dh
                else:
                    nrm = np.linalg.norm(z, axis=1, keepdims=True)
                    u = np.divide(z, nrm, out=np.zeros_like(z), where=nrm > 0)
                    refl = dh - 2.0 * u * np.sum(u * dh, axis=1, keepdims=True)
                    ny = y + model.drift(y) * dt + np.einsum("nij,nj->ni", split.sigma_tilde(y), dw) + c * dh
                    nh = yh + model.drift(yh) * dt + np.einsum("nij,nj->ni", split.sigma_tilde(yh), dw) + c * refl
                step += 1
                nz = ny - nh
                hit = np.linalg.norm(nz, axis=1) <= thr
                if crossing and d == 1:
                    hit |= (z[:, 0] * nz[:, 0]) <= 0
                new = hit & ~glued
                if new.any():
                    cstep[new] = step
                    glued |= new
                nh = np.where(glued[:, None], ny, nh)
                bad = ~(np.all(np.isfinite(ny), axis=1) & np.all(np.isfinite(nh), axis=1))
                if bad.any():
                    diverged |= bad
                    ny[bad] = np.nan
                    nh[bad] = np.nan
                y, yh = ny, nh
                if step % record_every == 0:
                    ys[:, rec], hs[:, rec] = y, yh
                    rec += 1
    return ys, hs, cstep, diverged


def simulate_coupled(model, split: DiffusionSplit, y0, y_hat0, grid: TimeGrid, n_pairs: int,
                     seed: int, glue_threshold: Optional[float] = None, *, record_every: int = 1,
                     crossing: bool = True, threads: int = 1) -> CoupledEnsemble:
    """Reflection-coupled Euler-Maruyama pairs.

    Both copies share the sigma_tilde channel; the isotropic (2 kappa)^-1/2
    channel is reflected across Z = Y - Y_hat for the second copy.  A pair is
    glued once |Z| <= glue_threshold or, in 1-d with ``crossing``, once Z
    changes sign within a step (the continuous difference must have hit 0).
    """
    if split.model is not model:
        log.debug("split was built from a different model object")
    if n_pairs < 1:
        raise InputError("n_pairs must be >= 1")
    if record_every < 1 or grid.n_steps % record_every:
        raise InputError("record_every must divide n_steps")
    thr = default_glue_threshold(y0, y_hat0) if glue_threshold is None else float(glue_threshold)
    if not thr > 0:
        raise InputError("glue_threshold must be positive")
    d = model.dim
    y = _initial_states(y0, n_pairs, d)
    yh = _initial_states(y_hat0, n_pairs, d)
    streams = np.arange(n_pairs, dtype=np.int64)
    threads = max(1, int(threads))
    if threads == 1 or n_pairs < 2 * threads:
        ys, hs, cs, dv = _coupled_block(split, y, yh, grid, seed, streams, thr, record_every, crossing)
    else:
        cuts = np.linspace(0, n_pairs, threads + 1).astype(int)
        with ThreadPoolExecutor(threads) as ex:
            res = list(ex.map(lambda i: _coupled_block(
                split, y[cuts[i]:cuts[i + 1]], yh[cuts[i]:cuts[i + 1]], grid, seed,
                streams[cuts[i]:cuts[i + 1]], thr, record_every, crossing), range(threads)))
        ys, hs, cs, dv = (np.concatenate([r[k] for r in res]) for k in range(4))
    if dv.any():
        log.warning("%d of %d pairs diverged", int(dv.sum()), n_pairs)
    return CoupledEnsemble(grid, d, ys, hs, cs, dv, record_every, thr, int(seed))


@dataclass(frozen=True)
class ContractionEstimate:
    time_points: Array
    mean_distance: Array
    se: Array
    fitted_rate: Optional[float]
    fitted_prefactor: Optional[float]
    fully_coupled: bool
    fit_mask: Array
    cost: str

    @property
    def relative_prefactor(self) -> Optional[float]:
        if self.fitted_prefactor is None or self.mean_distance[0] <= 0:
            return None
        return self.fitted_prefactor / self.mean_distance[0]

    def to_dict(self) -> dict:
        return {"cost": self.cost, "timePoints": self.time_points.tolist(),
                "meanDistance": self.mean_distance.tolist(), "se": self.se.tolist(),
                "fittedRate": self.fitted_rate, "fittedPrefactor": self.fitted_prefactor,
                "fullyCoupled": self.fully_coupled, "fitMask": self.fit_mask.tolist()}


CostMode = Union[str, tuple]


def _cost_fn(cost: CostMode):
    if cost == "W1":
        return "W1", lambda a, b: np.linalg.norm(a - b, axis=1)
    if isinstance(cost, tuple) and cost[0] == "quasi":
        _, p, theta = cost
        if p < 2 or not (0 < theta <= 1):
            raise InputError("quasi cost needs p >= 2 and theta in (0,1]")
        return f"quasi(p={p},theta={theta})", lambda a, b: quasi_cost(a, b, p, theta)
    raise InputError(f"unknown cost mode {cost!r}")


def fit_log_linear(t: Array, m: Array, mask: Array) -> tuple[Optional[float], Optional[float]]:
    if mask.sum() < 2:
        return None, None
    slope, icpt = np.polyfit(t[mask], np.log(m[mask]), 1)
    return float(-slope), float(np.exp(icpt))


def estimate_contraction(pairs: CoupledEnsemble, cost: CostMode = "W1",
                         time_points=None) -> ContractionEstimate:
    label, fn = _cost_fn(cost)
    tp = pairs.times if time_points is None else np.asarray(time_points, dtype=float)
    if tp.size < 2:
        raise InputError("need at least two time points")
    ok = ~pairs.diverged
    means, ses = [], []
    for t in tp:
        j = pairs.record_index(float(t))
        c = fn(pairs.y[ok, j], pairs.y_hat[ok, j])
        means.append(float(c.mean()))
        ses.append(float(c.std(ddof=1) / np.sqrt(c.size)) if c.size > 1 else 0.0)
    means, ses = np.array(means), np.array(ses)
    mask = (means > 10 * ses) & (means > 0)
    rate, pref = fit_log_linear(tp, means, mask)
    return ContractionEstimate(tp, means, ses, rate, pref, rate is None, mask, label)
