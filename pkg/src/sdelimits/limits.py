"""Limit-theorem laboratory: time averages, invariant measure, corrector,
asymptotic variance, martingale blocks, LLN rates and CLT distances.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np
from scipy import stats

from .coupling import CoupledEnsemble, ContractionEstimate, quasi_cost
from .errors import DomainError, EvaluationError, InputError
from .integrate import PathEnsemble, TimeGrid, simulate

log = logging.getLogger(__name__)

Array = np.ndarray
Regularity = Union[str, tuple]  # "lipschitz" or ("C", p, theta)


# --------------------------------------------------------------------------
# observables


@dataclass(frozen=True)
class Observable:
    """Test function ``f: (n, d) -> (n,)`` with an empirical norm."""

    f: Callable[[Array], Array]
    regularity: Regularity = "lipschitz"
    norm_estimate: float = float("nan")
    name: str = "f"

    def __call__(self, x: Array) -> Array:
        return np.asarray(self.f(np.asarray(x, dtype=float)), dtype=float)

    def scaled(self, a: float) -> "Observable":
        g = self.f
        return Observable(lambda x: a * g(x), self.regularity, abs(a) * self.norm_estimate,
                          f"{a}*{self.name}")


def estimate_norm(f: Callable[[Array], Array], regularity: Regularity, x: Array,
                  y: Array) -> float:
    """sup |f(x)-f(y)| / |x-y| or / psi_{p,theta}(x, y) over sampled pairs."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    df = np.abs(np.asarray(f(x)) - np.asarray(f(y)))
    if regularity == "lipschitz":
        den = np.linalg.norm(x - y, axis=1)
    elif isinstance(regularity, tuple) and regularity[0] == "C":
        den = quasi_cost(x, y, regularity[1], regularity[2])
    else:
        raise InputError(f"unknown regularity class {regularity!r}")
    ok = den > 0
    if not ok.any():
        raise InputError("no distinct pairs to estimate the norm on")
    v = float(np.max(df[ok] / den[ok]))
    if not np.isfinite(v):
        raise EvaluationError("observable norm is not finite on the sample")
    return v


def make_observable(f: Callable[[Array], Array], regularity: Regularity = "lipschitz",
                    dim: int = 1, radius: float = 10.0, n_pairs: int = 4000, seed: int = 0,
                    name: str = "f") -> Observable:
    rng = np.random.default_rng(seed)
    x = rng.uniform(-radius, radius, (n_pairs, dim))
    y = x + rng.normal(0.0, 1.0, (n_pairs, dim)) * rng.choice([1e-3, 0.1, 1.0, 5.0],
                                                              (n_pairs, 1))
    return Observable(f, regularity, estimate_norm(f, regularity, x, y), name)


def _obs_identity(coord: int = 0, **_):
    return make_observable(lambda x: x[:, coord], "lipschitz", max(coord + 1, 1),
                           name="identity")


def _obs_constant(c: float = 1.0, **_):
    return Observable(lambda x: np.full(x.shape[0], float(c)), "lipschitz", 0.0, "constant")


def _obs_square(coord: int = 0, **_):
    return make_observable(lambda x: x[:, coord] ** 2, ("C", 2, 1), coord + 1, name="square")


def _obs_sine(coord: int = 0, freq: float = 1.0, **_):
    return make_observable(lambda x: np.sin(freq * x[:, coord]), "lipschitz", coord + 1,
                           name="sine")


OBSERVABLES: dict[str, Callable[..., Observable]] = {
    "identity": _obs_identity,
    "constant": _obs_constant,
    "square": _obs_square,
    "sine": _obs_sine,
}


def get_observable(name: str, **params) -> Observable:
    if name not in OBSERVABLES:
        raise InputError(f"unknown observable {name!r}; known: {sorted(OBSERVABLES)}")
    return OBSERVABLES[name](**params)


# --------------------------------------------------------------------------
# additive functionals


def _f_integrals(ensemble: PathEnsemble, f) -> Array:
    """Running left-Riemann integrals of f at every record, shape (N, R)."""
    name = getattr(f, "name", None)
    if name is not None and name in ensemble.integrals:
        return np.asarray(ensemble.integrals[name])
    if isinstance(f, str):
        raise InputError(f"ensemble holds no integral named {f!r}")
    if ensemble.record_every != 1:
        raise InputError("a callable f needs every step recorded (record_every=1) "
                         "or an on-the-fly integral")
    n, r, d = ensemble.states.shape
    fx = np.asarray(f(ensemble.states.reshape(-1, d)), dtype=float).reshape(n, r)
    out = np.zeros((n, r))
    out[:, 1:] = np.cumsum(fx[:, :-1], axis=1) * ensemble.grid.dt
    return out


def additive_functional(ensemble: PathEnsemble, f, t_points, normalization: str = "byT",
                        centre: float = 0.0) -> Array:
    """Per-path ``(1/t) int_0^t (f - centre)`` (byT) or the 1/sqrt(t) version.

    Returns shape (n_valid_paths, len(t_points)); diverged paths are dropped.
    """
    if normalization not in ("byT", "bySqrtT"):
        raise InputError("normalization must be 'byT' or 'bySqrtT'")
    tp = np.asarray(t_points, dtype=float)
    if np.any(tp <= ensemble.grid.t0):
        raise InputError("t points must exceed the grid start")
    ints = _f_integrals(ensemble, f)[ensemble.valid()]
    idx = [ensemble.record_index(float(t)) for t in tp]
    elapsed = tp - ensemble.grid.t0
    vals = ints[:, idx] - centre * elapsed[None, :]
    scale = elapsed if normalization == "byT" else np.sqrt(elapsed)
    return vals / scale[None, :]


# --------------------------------------------------------------------------
# invariant measure


@dataclass(frozen=True)
class InvariantConfig:
    n_paths: int = 256
    horizon: float = 200.0
    dt: float = 1e-3
    thin: float = 1.0  # time between retained draws
    x0: object = 0.0
    seed: int = 0
    burn_in: Optional[float] = None
    rate: Optional[float] = None  # fitted contraction rate for the default burn-in
    observables: Mapping[str, Observable] = field(default_factory=dict)
    stream_indices: Optional[Array] = None
    threads: int = 1


@dataclass(frozen=True)
class MuEstimate:
    mean: float
    se: float
    n_paths: int

    def to_dict(self) -> dict:
        return {"mean": self.mean, "se": self.se, "nPaths": self.n_paths}


@dataclass(frozen=True)
class InvariantMeasureSample:
    points: Array  # (M, d)
    burn_in: float
    thin_stride: float
    source_horizon: float
    mu_f: Mapping[str, MuEstimate]
    degenerate: bool
    warnings: tuple = ()
    final_points: Optional[Array] = None  # last state of every path

    def __post_init__(self):
        self.points.setflags(write=False)

    def to_dict(self) -> dict:
        return {"nPoints": int(self.points.shape[0]), "burnIn": self.burn_in,
                "thinStride": self.thin_stride, "sourceHorizon": self.source_horizon,
                "muF": {k: v.to_dict() for k, v in self.mu_f.items()},
                "degenerate": self.degenerate, "warnings": list(self.warnings)}

    def to_csv(self, path) -> None:
        d = self.points.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{k}" for k in range(d)])
            w.writerows(self.points.tolist())


def estimate_invariant_measure(model, config: InvariantConfig) -> InvariantMeasureSample:
    """Thinned long-run draws after burn-in, with per-path time averages of f."""
    cfg = config
    warn = []
    if cfg.burn_in is not None:
        burn = float(cfg.burn_in)
    elif cfg.rate is not None and cfg.rate > 0:
        burn = 10.0 / cfg.rate
    else:
        burn = cfg.horizon / 2
        msg = "no contraction estimate; burn-in falls back to horizon/2"
        log.warning(msg)
        warn.append(msg)
    if burn < 0 or burn >= cfg.horizon:
        raise InputError("burn-in must lie in [0, horizon)")
    grid = TimeGrid.from_horizon(cfg.horizon, cfg.dt)
    rec = max(1, int(round(cfg.thin / cfg.dt)))
    if grid.n_steps % rec:
        raise InputError("thin stride must divide the horizon")
    obs = {k: v for k, v in cfg.observables.items()}
    ens = simulate(model, cfg.x0, grid, cfg.n_paths, cfg.seed, record_every=rec,
                   observables=obs, stream_indices=cfg.stream_indices, threads=cfg.threads)
    t = ens.times
    keep = t >= burn - 1e-9
    ok = ens.valid()
    pts = ens.states[ok][:, keep].reshape(-1, ens.dim)
    j0 = int(np.argmax(keep))
    span = t[-1] - t[j0]
    mu = {}
    for k in obs:
        ints = ens.integrals[k][ok]
        avg = (ints[:, -1] - ints[:, j0]) / span
        n = avg.size
        mu[k] = MuEstimate(float(avg.mean()), float(avg.std(ddof=1) / np.sqrt(n)) if n > 1
                           else float("inf"), n)
    degenerate = bool(pts.size and np.all(pts == pts[0]))
    if degenerate:
        msg = "all retained draws are identical (degenerate dynamics)"
        log.warning(msg)
        warn.append(msg)
    return InvariantMeasureSample(pts, burn, rec * cfg.dt, cfg.horizon, mu, degenerate,
                                  tuple(warn), ens.states[ok][:, -1].copy())


# --------------------------------------------------------------------------
# corrector


def _rate_and_prefactor(contraction) -> tuple[Optional[float], float]:
    if isinstance(contraction, ContractionEstimate):
        rate = contraction.fitted_rate
        pref = contraction.relative_prefactor
        return rate, 1.0 if pref is None else float(pref)
    if isinstance(contraction, tuple):
        return float(contraction[0]), float(contraction[1])
    if contraction is None:
        return None, 1.0
    return float(contraction), 1.0


@dataclass(frozen=True)
class CorrectorEstimate:
    points: Array  # (J,) evaluation points, 1-d
    values: Array
    se: Array  # Monte Carlo SE of the truncated integral
    horizon: float
    tail_bound: Array
    rate: float
    mu_f: MuEstimate
    uncertainty: Array  # sqrt(se^2 + (T se_mu)^2) + tail bound

    def __call__(self, x) -> Array:
        """Piecewise-linear interpolant, linearly extrapolated beyond the ends."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            if x.shape[1] != 1:
                raise InputError("corrector interpolation is 1-d only")
            x = x[:, 0]
        p, v = self.points, self.values
        if p.size == 1:
            return np.full(x.shape, v[0])
        out = np.interp(x, p, v)
        lo, hi = x < p[0], x > p[-1]
        out[lo] = v[0] + (x[lo] - p[0]) * (v[1] - v[0]) / (p[1] - p[0])
        out[hi] = v[-1] + (x[hi] - p[-1]) * (v[-1] - v[-2]) / (p[-1] - p[-2])
        return out

    def to_dict(self) -> dict:
        return {"points": self.points.tolist(), "values": self.values.tolist(),
                "se": self.se.tolist(), "horizon": self.horizon,
                "tailBound": self.tail_bound.tolist(), "rate": self.rate,
                "uncertainty": self.uncertainty.tolist(), "muF": self.mu_f.to_dict()}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "R", "se", "tailBound", "uncertainty"])
            for row in zip(self.points, self.values, self.se, self.tail_bound,
                           self.uncertainty):
                w.writerow([float(v) for v in row])


def estimate_corrector(model, f: Observable, points, mu_f: MuEstimate, contraction,
                       horizon: Optional[float] = None, n_paths: int = 1000,
                       dt: float = 1e-3, seed: int = 0, first_moment: float = 1.0,
                       threads: int = 1) -> CorrectorEstimate:
    """Truncated ``int_0^T (P_t f(x) - mu(f)) dt`` from fresh ensembles at each x.

    All points share the same noise streams so the estimate is smooth in x.
    """
    rate, pref = _rate_and_prefactor(contraction)
    if rate is None or not np.isfinite(rate) or rate <= 0:
        raise DomainError(f"corrector needs a positive fitted contraction rate, got {rate}")
    T = 10.0 / rate if horizon is None else float(horizon)
    if T < 5.0 / rate * (1 - 1e-12):
        raise InputError(f"horizon {T} is shorter than 5 e-folding times ({5 / rate})")
    pts = np.asarray(points, dtype=float).reshape(-1)
    if model.dim != 1:
        raise InputError("corrector estimation is implemented for 1-d models")
    J = pts.size
    grid = TimeGrid.from_horizon(T, dt)
    x0 = np.repeat(pts, n_paths)
    streams = np.tile(np.arange(n_paths, dtype=np.int64), J)
    ens = simulate(model, x0, grid, J * n_paths, seed, record_every=grid.n_steps,
                   observables={f.name: f}, stream_indices=streams, quadrature="trapezoid",
                   threads=threads)
    tot = np.asarray(ens.integrals[f.name])[:, -1] - mu_f.mean * grid.horizon
    tot = tot.reshape(J, n_paths)
    ok = ens.valid().reshape(J, n_paths)
    vals = np.array([tot[j, ok[j]].mean() for j in range(J)])
    se = np.array([tot[j, ok[j]].std(ddof=1) / np.sqrt(ok[j].sum()) for j in range(J)])
    lf = f.norm_estimate if np.isfinite(f.norm_estimate) else 1.0
    tail = lf * pref * (np.abs(pts) + first_moment) * math.exp(-rate * T) / rate
    unc = np.sqrt(se ** 2 + (grid.horizon * mu_f.se) ** 2) + tail
    return CorrectorEstimate(pts, vals, se, grid.horizon, tail, float(rate), mu_f, unc)


# --------------------------------------------------------------------------
# asymptotic variance


@dataclass(frozen=True)
class SigmaStarEstimate:
    sigma_star_sq: float
    se: float
    cross_check: float  # 2 mean(f_c R) over the mu-sample
    cross_se: float
    combined_se: float
    n_points: int
    n_inner: int
    phi_values: Array

    @property
    def consistent(self) -> bool:
        return abs(self.sigma_star_sq - self.cross_check) <= 3 * self.combined_se

    def to_dict(self) -> dict:
        return {"sigmaStarSq": self.sigma_star_sq, "se": self.se,
                "crossCheck": self.cross_check, "crossSe": self.cross_se,
                "combinedSe": self.combined_se, "consistent": self.consistent,
                "nPoints": self.n_points, "nInner": self.n_inner}


def estimate_phi_and_sigma_star(model, f: Observable, mu_sample, corrector: CorrectorEstimate,
                                n_inner: int = 8, dt: float = 1e-3, seed: int = 0,
                                max_points: Optional[int] = None,
                                threads: int = 1) -> SigmaStarEstimate:
    """``phi(x) = E|int_0^1 f_c + R(X_1) - R(x)|^2`` averaged over mu-sample points."""
    pts = mu_sample.points if isinstance(mu_sample, InvariantMeasureSample) else mu_sample
    pts = np.asarray(pts, dtype=float).reshape(-1, model.dim)
    if max_points is not None and pts.shape[0] > max_points:
        sel = np.linspace(0, pts.shape[0] - 1, max_points).astype(int)
        pts = pts[sel]
    M = pts.shape[0]
    if M < 100:
        raise InputError(f"mu-sample has {M} points; at least 100 are required")
    mu = corrector.mu_f.mean
    grid = TimeGrid.from_horizon(1.0, dt)
    x0 = np.repeat(pts, n_inner, axis=0)
    ens = simulate(model, x0, grid, M * n_inner, seed, record_every=grid.n_steps,
                   observables={f.name: f}, threads=threads)
    ok = ens.valid()
    z = np.asarray(ens.integrals[f.name])[:, -1] - mu + corrector(ens.states[:, -1]) \
        - corrector(x0)
    z2 = np.where(ok, z * z, np.nan).reshape(M, n_inner)
    phi = np.nanmean(z2, axis=1)
    s2 = float(phi.mean())
    se = float(phi.std(ddof=1) / np.sqrt(M))
    fr = (f(pts) - mu) * corrector(pts)
    cross = float(2 * fr.mean())
    cross_se = float(2 * fr.std(ddof=1) / np.sqrt(M))
    # corrector uncertainty enters the cross-check linearly
    unc = np.interp(pts[:, 0], corrector.points, corrector.uncertainty)
    corr_term = float(2 * np.mean(np.abs(f(pts) - mu) * unc))
    combined = math.sqrt(se ** 2 + cross_se ** 2) + corr_term
    return SigmaStarEstimate(s2, se, cross, cross_se, combined, M, n_inner, phi)


# --------------------------------------------------------------------------
# martingale decomposition


@dataclass(frozen=True)
class MartingaleDecomposition:
    increments: Array  # Z_i, shape (N, n_blocks)
    remainder: Array  # R_t per path
    abar: Array  # directly computed normalized functional at t
    t: float
    mean_increment: float
    mean_se: float
    second_moment: float
    second_moment_se: float
    identity_error: float
    warnings: tuple = ()

    @property
    def mean_zero(self) -> bool:
        return abs(self.mean_increment) <= 3 * self.mean_se

    def to_dict(self) -> dict:
        return {"t": self.t, "nBlocks": int(self.increments.shape[1]),
                "meanIncrement": self.mean_increment, "meanSe": self.mean_se,
                "meanZero": self.mean_zero, "secondMoment": self.second_moment,
                "secondMomentSe": self.second_moment_se, "identityError": self.identity_error,
                "warnings": list(self.warnings)}


def martingale_decomposition(ensemble: PathEnsemble, f, corrector: Callable[[Array], Array],
                             mu: float = 0.0, t: Optional[float] = None,
                             corrector_se: Optional[float] = None) -> MartingaleDecomposition:
    """Unit blocks ``Z_i = int_{i-1}^i f_c + R(X_i) - R(X_{i-1})`` and the remainder

    ``R_t = Abar_t - n^{-1/2} sum Z_i`` with ``n = floor(t)``, which equals
    ``(t^{-1/2} - n^{-1/2}) M_n + t^{-1/2}(int_n^t f_c + R(X_0) - R(X_n))``.
    """
    g = ensemble.grid
    t = g.horizon if t is None else float(t)
    n = int(math.floor(t - g.t0 + 1e-9))
    if n < 1:
        raise InputError("need at least one unit block")
    idx = [ensemble.record_index(g.t0 + i) for i in range(n + 1)]
    ints = _f_integrals(ensemble, f)[ensemble.valid()]
    states = ensemble.states[ensemble.valid()]
    N, _, d = states.shape
    tel = np.arange(n + 1, dtype=float)
    icum = ints[:, idx] - mu * tel[None, :]
    rv = np.asarray(corrector(states[:, idx].reshape(-1, d)), dtype=float).reshape(N, n + 1)
    Z = np.diff(icum, axis=1) + np.diff(rv, axis=1)
    jt = ensemble.record_index(t)
    el = t - g.t0
    abar = (ints[:, jt] - mu * el) / math.sqrt(el)
    Mn = Z.sum(axis=1)
    rem_direct = (1 / math.sqrt(el) - 1 / math.sqrt(n)) * Mn + (
        (ints[:, jt] - mu * el) - icum[:, -1] + rv[:, 0] - rv[:, -1]) / math.sqrt(el)
    rem = abar - Mn / math.sqrt(n)
    err = float(np.max(np.abs(Mn / math.sqrt(n) + rem_direct - abar))) if N else 0.0
    zf = Z.reshape(-1)
    # blocks within a path are uncorrelated martingale increments, paths independent
    mean = float(zf.mean())
    mse = float(zf.std(ddof=1) / math.sqrt(zf.size)) if zf.size > 1 else float("inf")
    z2 = Z * Z
    per_path = z2.mean(axis=1)
    m2 = float(per_path.mean())
    m2se = float(per_path.std(ddof=1) / math.sqrt(N)) if N > 1 else float("inf")
    warn = []
    if corrector_se is not None and corrector_se > 0.5 * math.sqrt(max(m2, 0.0)):
        warn.append("corrector uncertainty dominates the increment scale")
        log.warning(warn[-1])
    return MartingaleDecomposition(Z, rem, abar, t, mean, mse, m2, m2se, err, tuple(warn))


# --------------------------------------------------------------------------
# distances


def empirical_w1(a, b) -> float:
    """Exact 1-d W1 between empirical measures.

    Equal sizes use the sorted pairing; ``|a - b| = s a - s b`` with the exact
    sign ``s`` makes the sum over the raw samples exactly rounded.  Unequal
    sizes use the CDF-area formula.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.size == 0 or b.size == 0:
        raise InputError("empirical_w1 needs nonempty samples")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise EvaluationError("non-finite sample value")
    if a.size == b.size:
        sa, sb = np.sort(a), np.sort(b)
        sign = np.sign(sa - sb)
        return math.fsum(np.concatenate([sign * sa, -sign * sb]).tolist()) / a.size
    return float(stats.wasserstein_distance(a, b))


def coupled_quasi_distance(pairs: CoupledEnsemble, p: float, theta: float, t: float,
                           with_se: bool = False):
    """Monte Carlo mean of psi_{p,theta}(Y_t, Yhat_t) over non-diverged pairs."""
    j = pairs.record_index(float(t))
    ok = ~pairs.diverged
    c = quasi_cost(pairs.y[ok, j], pairs.y_hat[ok, j], p, theta)
    m = float(c.mean())
    if not with_se:
        return m
    return m, float(c.std(ddof=1) / math.sqrt(c.size)) if c.size > 1 else 0.0


# --------------------------------------------------------------------------
# LLN


def _median_se(v: Array) -> float:
    """Distribution-free SE of the median from the 95% order-statistic interval."""
    n = v.size
    if n < 4:
        return float("inf")
    s = np.sort(v)
    h = 1.96 * math.sqrt(n) / 2
    lo = max(int(math.floor(n / 2 - h)), 0)
    hi = min(int(math.ceil(n / 2 + h)), n - 1)
    return float((s[hi] - s[lo]) / (2 * 1.96))


@dataclass(frozen=True)
class LlnReport:
    t_points: Array
    medians: Array
    median_se: Array
    noise_floor: float
    fit_mask: Array
    slope: Optional[float]
    intercept: Optional[float]
    mu_f: MuEstimate
    n_paths: int

    def to_dict(self) -> dict:
        return {"tPoints": self.t_points.tolist(), "medians": self.medians.tolist(),
                "medianSe": self.median_se.tolist(), "noiseFloor": self.noise_floor,
                "fitMask": self.fit_mask.tolist(), "slope": self.slope,
                "intercept": self.intercept, "muF": self.mu_f.to_dict(), "nPaths": self.n_paths}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "median", "medianSe", "inFit"])
            for row in zip(self.t_points, self.medians, self.median_se, self.fit_mask):
                w.writerow([float(row[0]), float(row[1]), float(row[2]), int(row[3])])


def _record_stride(t_points: Array, dt: float) -> int:
    steps = [int(round(t / dt)) for t in t_points]
    g = 0
    for s in steps:
        g = math.gcd(g, s)
    return max(g, 1)


def lln_rate_experiment(model, f: Observable, t_points, n_paths: int, mu_f: MuEstimate,
                        dt: float = 1e-3, x0=0.0, seed: int = 0,
                        threads: int = 1) -> LlnReport:
    """Median over paths of |A_t - mu(f)| and the log-log slope against t."""
    tp = np.asarray(t_points, dtype=float)
    if tp.size < 5:
        raise InputError("LLN fit needs at least 5 time points")
    logs = np.log2(tp)
    if not np.allclose(logs, np.round(logs)):
        raise InputError("LLN time points must be powers of two")
    grid = TimeGrid.from_horizon(float(tp.max()), dt)
    rec = _record_stride(tp, dt)
    ens = simulate(model, x0, grid, n_paths, seed, record_every=rec,
                   observables={f.name: f}, threads=threads)
    dev = np.abs(additive_functional(ens, f, tp, "byT", centre=mu_f.mean))
    med = np.median(dev, axis=0)
    mse = np.array([_median_se(dev[:, k]) for k in range(tp.size)])
    floor = 3 * mu_f.se
    mask = med > floor
    slope = intercept = None
    if mask.sum() >= 2:
        slope, intercept = (float(v) for v in np.polyfit(np.log(tp[mask]), np.log(med[mask]), 1))
    return LlnReport(tp, med, mse, float(floor), mask, slope, intercept, mu_f, int(dev.shape[0]))


# --------------------------------------------------------------------------
# CLT


def weighted_kolmogorov(samples, sigma: float) -> float:
    """``sup_z theta(z) |F_n(z) - Phi_sigma(z)|`` evaluated exactly.

    ``theta = 1`` when sigma > 0; when sigma = 0 the target is the point mass
    at 0 and ``theta(z) = min(1, |z|)``.
    """
    s = np.sort(np.asarray(samples, dtype=float).reshape(-1))
    n = s.size
    if n == 0:
        raise InputError("empty sample")
    v, counts = np.unique(s, return_counts=True)
    F = np.cumsum(counts) / n
    Fm = np.concatenate([[0.0], F[:-1]])
    if sigma > 0:
        P = stats.norm.cdf(v, scale=sigma)
        return float(max(np.max(np.abs(F - P)), np.max(np.abs(Fm - P))))
    if sigma < 0:
        raise InputError("sigma must be nonnegative")
    best = 0.0
    neg = v < 0
    if neg.any():
        best = float(np.max(np.minimum(1.0, -v[neg]) * F[neg]))
    # z >= 0: F is constant on [a, b) between breaks, the weight rises towards b
    br = np.unique(np.concatenate([[0.0], v[v >= 0]]))
    Fa = np.searchsorted(s, br, side="right") / n
    ends = np.concatenate([br[1:], [np.inf]])
    best = max(best, float(np.max(np.minimum(1.0, ends) * (1.0 - Fa))))
    return min(best, 1.0)


@dataclass(frozen=True)
class CltReport:
    t_points: Array
    sigma_star_sq: float
    sigma_star_se: float
    cross_check: Optional[float]
    branch: str  # "positive" or "degenerate"
    ks_distance: Array
    ks_noise: float
    fitted_decay: Optional[float]
    ecdf: Mapping[float, Array]
    mu_f: MuEstimate
    n_paths: int

    def to_dict(self) -> dict:
        return {"tPoints": self.t_points.tolist(), "sigmaStarSq": self.sigma_star_sq,
                "sigmaStarSe": self.sigma_star_se, "crossCheck": self.cross_check,
                "branch": self.branch, "ksDistance": self.ks_distance.tolist(),
                "ksNoise": self.ks_noise, "fittedDecay": self.fitted_decay,
                "muF": self.mu_f.to_dict(), "nPaths": self.n_paths}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "ksDistance"])
            for t, k in zip(self.t_points, self.ks_distance):
                w.writerow([float(t), float(k)])

    def ecdf_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "value", "ecdf"])
            for t in self.t_points:
                s = self.ecdf[float(t)]
                n = s.size
                for i, v in enumerate(s):
                    w.writerow([float(t), float(v), (i + 1) / n])


def clt_experiment(model, f: Observable, t_points, n_paths: int, sigma_star,
                   mu_f: MuEstimate, dt: float = 1e-3, x0=0.0, seed: int = 0,
                   threads: int = 1) -> CltReport:
    """Weighted Kolmogorov distance of ``Abar_t`` to the fitted Gaussian."""
    if n_paths < 1000:
        raise InputError("CLT diagnostics need at least 1000 paths")
    if isinstance(sigma_star, SigmaStarEstimate):
        s2, s2se, cross = sigma_star.sigma_star_sq, sigma_star.combined_se, \
            sigma_star.cross_check
    else:
        s2, s2se = (float(v) for v in sigma_star)
        cross = None
    degenerate = s2 <= 3 * s2se
    sigma = 0.0 if degenerate else math.sqrt(s2)
    tp = np.asarray(t_points, dtype=float)
    grid = TimeGrid.from_horizon(float(tp.max()), dt)
    rec = _record_stride(tp, dt)
    ens = simulate(model, x0, grid, n_paths, seed, record_every=rec,
                   observables={f.name: f}, threads=threads)
    ab = additive_functional(ens, f, tp, "bySqrtT", centre=mu_f.mean)
    ks = np.array([weighted_kolmogorov(ab[:, k], sigma) for k in range(tp.size)])
    decay = None
    if tp.size >= 2 and np.all(ks > 0):
        decay = float(np.polyfit(np.log(tp), np.log(ks), 1)[0])
    ecdf = {float(t): np.sort(ab[:, k]) for k, t in enumerate(tp)}
    noise = 0.87 / math.sqrt(ab.shape[0])  # mean KS distance under the null
    return CltReport(tp, s2, s2se, cross, "degenerate" if degenerate else "positive", ks,
                     noise, decay, ecdf, mu_f, int(ab.shape[0]))
