"""Drift/diffusion specifications for the three regimes and their verifiers.

Vector models (``HolderDissipativeModel``, ``MonotoneLyapunovModel``) take
callables vectorized over a leading sample axis: ``b0(x)``, ``b1(x)`` map an
``(n, d)`` array to ``(n, d)`` and ``sigma(x)`` maps it to ``(n, d, d)``.
``PiecewiseModel`` is one-dimensional and its ``b``/``sigma`` act on ``(n,)``
arrays.  Every model exposes ``drift(x)`` and ``diffusion(x)`` on ``(n, d)``
arrays, which is all the integrators need.

Verifiers check the universally quantified assumptions on finite structured
pair samples and return an :class:`AssumptionReport`.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    EvaluationError,
    InputError,
    IntervalStraddleError,
)

log = logging.getLogger(__name__)

Array = np.ndarray


# --------------------------------------------------------------------------
# tolerances and reports


@dataclass(frozen=True)
class Tolerance:
    """Per-sample allowance ``abs + rel * max(|lhs|, |rhs|)``."""

    abs: float = 1e-9
    rel: float = 1e-7

    def allowance(self, lhs: Array, rhs: Array) -> Array:
        return self.abs + self.rel * np.maximum(np.abs(lhs), np.abs(rhs))


DEFAULT_TOL = Tolerance()


def _as_tol(tol) -> Tolerance:
    if tol is None:
        return DEFAULT_TOL
    if isinstance(tol, Tolerance):
        return tol
    return Tolerance(abs=float(tol), rel=0.0)


@dataclass(frozen=True)
class AssumptionReport:
    """Outcome of checking one inequality (or a bundle) on samples.

    ``worst_violation`` is the positive excess ``lhs - rhs`` at the sample
    whose excess over its allowance is largest, ``tolerance`` is that sample's
    allowance, so ``passed == (worst_violation <= tolerance)``.
    """

    assumption_id: str
    passed: bool
    worst_violation: float
    witness: Optional[tuple]
    samples_used: int
    tolerance: float
    check: str = ""
    margin: float = -math.inf
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        wit = None
        if self.witness is not None:
            wit = [None if w is None else np.asarray(w).tolist() for w in self.witness]
        return {
            "assumptionId": self.assumption_id,
            "passed": bool(self.passed),
            "worstViolation": float(self.worst_violation),
            "tolerance": float(self.tolerance),
            "witness": wit,
            "check": self.check,
            "samplesUsed": int(self.samples_used),
            "details": _jsonable(self.details),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, AssumptionReport):
        return obj.to_dict()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _report(assumption_id: str, check: str, lhs: Array, rhs: Array, x: Array,
            y: Optional[Array], tol: Tolerance, details=None) -> AssumptionReport:
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if lhs.size == 0:
        raise InputError(f"{assumption_id}: no samples to check")
    if not (np.all(np.isfinite(lhs)) and np.all(np.isfinite(rhs))):
        bad = int(np.flatnonzero(~(np.isfinite(lhs) & np.isfinite(rhs)))[0])
        raise EvaluationError(f"{assumption_id}/{check}: non-finite value at x={x[bad]}")
    excess = lhs - rhs
    allow = tol.allowance(lhs, rhs)
    score = excess - allow
    i = int(np.argmax(score))
    worst = max(float(excess[i]), 0.0)
    wit = (x[i].copy(), None if y is None else y[i].copy())
    return AssumptionReport(
        assumption_id=assumption_id,
        passed=bool(score[i] <= 0.0),
        worst_violation=worst,
        witness=wit,
        samples_used=int(lhs.size),
        tolerance=float(allow[i]),
        check=check,
        margin=float(score[i]),
        details=dict(details or {}),
    )


def combine_reports(assumption_id: str, reports: Sequence[AssumptionReport],
                    details=None) -> AssumptionReport:
    """Bundle sub-reports; the witness comes from the worst sub-check."""
    worst = max(reports, key=lambda r: r.margin)
    d = {"subReports": [r.to_dict() for r in reports]}
    d.update(details or {})
    return AssumptionReport(
        assumption_id=assumption_id,
        passed=all(r.passed for r in reports),
        worst_violation=worst.worst_violation,
        witness=worst.witness,
        samples_used=sum(r.samples_used for r in reports),
        tolerance=worst.tolerance,
        check=worst.check,
        margin=worst.margin,
        details=d,
    )


# --------------------------------------------------------------------------
# samplers


@dataclass(frozen=True)
class PairSampler:
    """A fixed set of point pairs ``x[i], y[i]`` of shape (m, d)."""

    x: Array
    y: Array
    seed: Optional[int] = None

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if x.shape != y.shape:
            raise InputError("pair sampler: x and y shapes differ")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.x.shape[0] if self.x.size else 0

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def points(self) -> Array:
        return np.concatenate([self.x, self.y])

    def distinct(self) -> "PairSampler":
        keep = np.any(self.x != self.y, axis=1)
        return PairSampler(self.x[keep], self.y[keep], self.seed)

    def filter(self, mask: Array) -> "PairSampler":
        return PairSampler(self.x[mask], self.y[mask], self.seed)

    @classmethod
    def from_points(cls, x: Array) -> "PairSampler":
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return cls(x, x.copy())


def _unit_vectors(rng: np.random.Generator, n: int, d: int) -> Array:
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def structured_pairs(dim: int, *, radius: float = 10.0, n_random: int = 2000,
                     ell0: Optional[float] = None, anchors: Sequence[float] = (),
                     seed: int = 0) -> PairSampler:
    """Random pairs plus pairs aimed at the inequalities' active sets.

    Includes pairs straddling separation ``ell0``, radial rays, close pairs
    (local Lipschitz regime) and, in 1-d, pairs hugging each anchor point.
    """
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    xs.append(rng.uniform(-radius, radius, (n_random, dim)))
    ys.append(rng.uniform(-radius, radius, (n_random, dim)))

    m = max(n_random // 4, 8)
    base = rng.uniform(-radius, radius, (m, dim))
    xs.append(base)
    ys.append(base + 1e-4 * _unit_vectors(rng, m, dim) * rng.uniform(0.1, 1.0, (m, 1)))

    if ell0 is not None:
        fac = np.array([1e-3, 1e-2, 0.1, 0.5])
        fac = np.concatenate([1 - fac, [1.0], 1 + fac])
        base = rng.uniform(-radius / 2, radius / 2, (m, dim))
        u = _unit_vectors(rng, m, dim)
        for s in fac:
            xs.append(base)
            ys.append(base + u * ell0 * s)

    r = np.concatenate([np.geomspace(1e-3, radius, 64), [0.0]])
    u = _unit_vectors(rng, 8, dim)
    if dim == 1:
        u = np.array([[1.0], [-1.0]])
    for ui in u:
        xs.append(r[:, None] * ui)
        ys.append(np.zeros((r.size, dim)))
        xs.append(r[:, None] * ui)
        ys.append(0.5 * r[:, None] * ui)

    if dim == 1 and len(anchors):
        h = np.geomspace(1e-8, 1.0, 24)
        for a in anchors:
            for sx, sy in ((1, 1), (-1, -1), (1, -1), (-1, 1)):
                xs.append((a + sx * h)[:, None])
                ys.append((a + sy * np.roll(h, 7))[:, None])
    return PairSampler(np.concatenate(xs), np.concatenate(ys), seed)


# --------------------------------------------------------------------------
# models


def _check_common(alpha, K1, K2, kappa, dim):
    if not (0.0 < alpha < 1.0):
        raise ConfigError(f"alpha must lie in (0,1), got {alpha}")
    if K1 <= 0 or K2 <= 0:
        raise ConfigError("K1 and K2 must be positive")
    if kappa < 1:
        raise ConfigError(f"kappa must be >= 1, got {kappa}")
    if dim < 1:
        raise ConfigError("dim must be >= 1")


@dataclass(frozen=True)
class HolderDissipativeModel:
    b0: Callable[[Array], Array]
    b1: Callable[[Array], Array]
    sigma: Callable[[Array], Array]
    alpha: float
    K1: float
    lambda1: float
    lambda2: float
    ell0: float
    K2: float
    kappa: float
    dim: int = 1
    name: str = "custom"
    regime = "holder_dissipative"

    def validate(self) -> None:
        _check_common(self.alpha, self.K1, self.K2, self.kappa, self.dim)
        if min(self.lambda1, self.lambda2, self.ell0) <= 0:
            raise ConfigError("lambda1, lambda2, ell0 must be positive")

    def drift(self, x: Array) -> Array:
        return self.b0(x) + self.b1(x)

    def diffusion(self, x: Array) -> Array:
        return self.sigma(x)

    def constants(self) -> dict:
        return {k: getattr(self, k) for k in
                ("alpha", "K1", "lambda1", "lambda2", "ell0", "K2", "kappa", "dim")}


@dataclass(frozen=True)
class MonotoneLyapunovModel:
    b0: Callable[[Array], Array]
    b1: Callable[[Array], Array]
    sigma: Callable[[Array], Array]
    alpha: float
    K1: float
    K2: float
    kappa: float
    lam: float
    lambda_star: float
    C_lambda_star: float
    dim: int = 1
    name: str = "custom"
    regime = "monotone_lyapunov"

    def validate(self) -> None:
        _check_common(self.alpha, self.K1, self.K2, self.kappa, self.dim)
        if self.lam <= 0 or self.lambda_star <= 0:
            raise ConfigError("lambda and lambdaStar must be positive")

    def drift(self, x: Array) -> Array:
        return self.b0(x) + self.b1(x)

    def diffusion(self, x: Array) -> Array:
        return self.sigma(x)

    def constants(self) -> dict:
        return {"alpha": self.alpha, "K1": self.K1, "K2": self.K2, "kappa": self.kappa,
                "lambda": self.lam, "lambdaStar": self.lambda_star,
                "C_lambdaStar": self.C_lambda_star, "dim": self.dim}


def side_limits(b: Callable[[Array], Array], xi: float, delta0: float = 1e-3,
                levels: int = 6) -> tuple[float, float]:
    """Left/right limits of ``b`` at ``xi`` by Richardson extrapolation.

    Uses h_k = 2^-k delta0 and assumes b(xi +- h) = L + c1 h + c2 h^2 + ...
    """
    h = delta0 * 2.0 ** -np.arange(levels)
    out = []
    for s in (-1.0, 1.0):
        table = list(np.asarray(b(xi + s * h), dtype=float))
        for j in range(1, levels):
            f = 2.0 ** j
            table = [(f * table[i + 1] - table[i]) / (f - 1) for i in range(len(table) - 1)]
        out.append(float(table[0]))
    return out[0], out[1]


@dataclass(frozen=True)
class PiecewiseModel:
    """1-d model with drift continuous on the open intervals between ``xi``."""

    b: Callable[[Array], Array]
    xi: tuple
    sigma: Callable[[Array], Array]
    lambda_piece: float
    eps_star: float
    lambda_sharp: float
    C_star: float
    K2: float
    kappa: float
    side_limits: Optional[tuple] = None
    phi_local: Optional[Callable[[int], float]] = None
    name: str = "custom"
    dim = 1
    regime = "piecewise"

    def __post_init__(self):
        xi = tuple(float(v) for v in self.xi)
        object.__setattr__(self, "xi", xi)
        if self.side_limits is None:
            object.__setattr__(self, "side_limits",
                               tuple(side_limits(self.b, v) for v in xi))

    def validate(self) -> None:
        if any(b <= a for a, b in zip(self.xi, self.xi[1:])):
            raise ConfigError("xi must be strictly increasing")
        if not (0.0 < self.eps_star <= 0.5):
            raise ConfigError("epsStar must lie in (0, 1/2]")
        if self.kappa < 1 or self.K2 <= 0:
            raise ConfigError("kappa >= 1 and K2 > 0 required")
        if len(self.side_limits) != len(self.xi):
            raise ConfigError("one (left, right) side-limit pair per xi required")

    def drift(self, x: Array) -> Array:
        return self.b(x[:, 0])[:, None]

    def diffusion(self, x: Array) -> Array:
        return self.sigma(x[:, 0])[:, None, None]

    def interval_index(self, x: Array) -> Array:
        return np.searchsorted(np.asarray(self.xi), x, side="left")

    def constants(self) -> dict:
        return {"xi": list(self.xi), "sideLimits": [list(s) for s in self.side_limits],
                "lambdaPiece": self.lambda_piece, "epsStar": self.eps_star,
                "lambdaSharp": self.lambda_sharp, "C_star": self.C_star,
                "K2": self.K2, "kappa": self.kappa}


# --------------------------------------------------------------------------
# inequality sides; each returns (lhs, rhs) arrays over samples


def _dot(a: Array, b: Array) -> Array:
    return np.einsum("ij,ij->i", a, b)


def _sides_e3(model, x, y):
    dx = x - y
    r2 = _dot(dx, dx)
    r = np.sqrt(r2)
    lhs = 2 * _dot(dx, model.b1(x) - model.b1(y))
    rhs = model.lambda1 * r2 * (r <= model.ell0) - model.lambda2 * r2 * (r >= model.ell0)
    return lhs, rhs


def _sides_e0(model, x, y):
    dx = x - y
    lhs = np.linalg.norm(model.b0(x) - model.b0(y), axis=1)
    rhs = model.K1 * np.linalg.norm(dx, axis=1) ** model.alpha
    return lhs, rhs


def _sides_estar(model, x, y):
    ds = model.diffusion(x) - model.diffusion(y)
    lhs = np.einsum("nij,nij->n", ds, ds)
    rhs = model.K2 * _dot(x - y, x - y)
    return lhs, rhs


def _gram_eigs(model, x):
    s = model.diffusion(x)
    if not np.all(np.isfinite(s)):
        raise EvaluationError("sigma returned non-finite entries")
    return np.linalg.eigvalsh(s @ np.swapaxes(s, 1, 2))


def _sides_e4_lower(model, x, y=None):
    ev = _gram_eigs(model, x)
    return np.full(x.shape[0], 1.0 / model.kappa), ev[:, 0]


def _sides_e4_upper(model, x, y=None):
    ev = _gram_eigs(model, x)
    return ev[:, -1], np.full(x.shape[0], float(model.kappa))


def _sides_onesided(model, x, y):
    dx = x - y
    return 2 * _dot(dx, model.b1(x) - model.b1(y)), model.lam * _dot(dx, dx)


def _sides_lyapunov(model, x, y=None):
    return _dot(x, model.b1(x)), -model.lambda_star * _dot(x, x) + model.C_lambda_star


def _check_same_piece(model: PiecewiseModel, x, y):
    ix, iy = model.interval_index(x[:, 0]), model.interval_index(y[:, 0])
    xi = np.asarray(model.xi)
    on_pt = np.isin(x[:, 0], xi) | np.isin(y[:, 0], xi)
    if np.any(ix != iy) or np.any(on_pt):
        raise IntervalStraddleError("per-piece check received pairs from different intervals")


def _sides_piece_onesided(model: PiecewiseModel, x, y):
    _check_same_piece(model, x, y)
    dx = x[:, 0] - y[:, 0]
    return dx * (model.b(x[:, 0]) - model.b(y[:, 0])), model.lambda_piece * dx * dx


def _sides_piece_lipschitz(model: PiecewiseModel, x, y):
    _check_same_piece(model, x, y)
    dx = np.abs(x[:, 0] - y[:, 0])
    n = np.maximum(1, np.ceil(np.maximum(np.abs(x[:, 0]), np.abs(y[:, 0]))))
    phi = np.array([model.phi_local(int(k)) for k in n])
    return np.abs(model.b(x[:, 0]) - model.b(y[:, 0])), phi * dx


def _sides_wstar(model: PiecewiseModel, x, y=None):
    v = x[:, 0]
    bv = model.b(v)
    lhs = model.eps_star * np.abs(bv) * (1 + np.abs(v)) + v * bv
    return lhs, model.C_star - model.lambda_sharp * v * v


CHECKS: dict[str, Callable] = {
    "E3": _sides_e3,
    "E0": _sides_e0,
    "E*": _sides_estar,
    "E4-lower": _sides_e4_lower,
    "E4-upper": _sides_e4_upper,
    "E*7": _sides_onesided,
    "E*6": _sides_lyapunov,
    "A_b-onesided": _sides_piece_onesided,
    "W*5": _sides_piece_lipschitz,
    "W*": _sides_wstar,
}


def replay_witness(model, report: AssumptionReport) -> float:
    """Re-evaluate the witness of ``report``; returns its positive excess."""
    x, y = report.witness
    x = np.atleast_2d(x)
    y = None if y is None else np.atleast_2d(y)
    lhs, rhs = CHECKS[report.check](model, x, y)
    return max(float(lhs[0] - rhs[0]), 0.0)


def _pairs(sampler: PairSampler, distinct: bool = False) -> PairSampler:
    if sampler is None or len(sampler) == 0:
        raise InputError("sampler yielded no samples")
    if distinct:
        sampler = sampler.distinct()
        if len(sampler) == 0:
            raise InputError("sampler yielded no distinct pairs")
    return sampler


def _pair_report(aid, check, model, s: PairSampler, tol, details=None):
    lhs, rhs = CHECKS[check](model, s.x, s.y)
    return _report(aid, check, lhs, rhs, s.x, s.y, tol, details)


def _point_report(aid, check, model, pts: Array, tol, details=None):
    lhs, rhs = CHECKS[check](model, pts, None)
    return _report(aid, check, lhs, rhs, pts, None, tol, details)


# --------------------------------------------------------------------------
# verifiers


def verify_dissipativity_at_infinity(model: HolderDissipativeModel, sampler: PairSampler,
                                     tol=None) -> AssumptionReport:
    s = _pairs(sampler)
    tol = _as_tol(tol)
    r = np.linalg.norm(s.x - s.y, axis=1)
    if not (np.any(r < model.ell0) and np.any(r > model.ell0)):
        log.warning("E3 sampler does not straddle ell0=%g", model.ell0)
    return _pair_report("E3", "E3", model, s, tol)


def verify_holder(model, sampler: PairSampler, tol=None) -> AssumptionReport:
    if not (0.0 < model.alpha < 1.0):
        raise ConfigError(f"alpha must lie in (0,1), got {model.alpha}")
    s = _pairs(sampler, distinct=True)
    return _pair_report("E0", "E0", model, s, _as_tol(tol))


def verify_ellipticity_lipschitz(model, sampler: PairSampler, tol=None) -> AssumptionReport:
    s = _pairs(sampler)
    tol = _as_tol(tol)
    pts = s.points()
    reps = [
        _pair_report("E*", "E*", model, s, tol),
        _point_report("E4", "E4-lower", model, pts, tol),
        _point_report("E4", "E4-upper", model, pts, tol),
    ]
    return combine_reports("E*/E4", reps)


def verify_monotone_lyapunov(model: MonotoneLyapunovModel, sampler: PairSampler,
                             tol=None) -> AssumptionReport:
    s = _pairs(sampler)
    tol = _as_tol(tol)
    reps = [
        _pair_report("E*7", "E*7", model, s, tol),
        _point_report("E*6", "E*6", model, s.points(), tol),
    ]
    return combine_reports("E*7/E*6", reps)


def verify_piecewise_assumptions(model: PiecewiseModel, sampler: PairSampler,
                                 tol=None) -> AssumptionReport:
    s = _pairs(sampler)
    tol = _as_tol(tol)
    xi = np.asarray(model.xi)
    ix = model.interval_index(s.x[:, 0])
    iy = model.interval_index(s.y[:, 0])
    same = (ix == iy) & ~np.isin(s.x[:, 0], xi) & ~np.isin(s.y[:, 0], xi)
    same &= np.any(s.x != s.y, axis=1)
    piece = s.filter(same)
    if len(piece) == 0:
        raise InputError("no same-interval pairs for per-piece checks")
    reps = [_pair_report("A_b", "A_b-onesided", model, piece, tol)]

    # local Lipschitz: empirical phi(n) on balls B_n
    bx, by = model.b(piece.x[:, 0]), model.b(piece.y[:, 0])
    ratio = np.abs(bx - by) / np.abs(piece.x[:, 0] - piece.y[:, 0])
    nball = np.maximum(1, np.ceil(np.maximum(np.abs(piece.x[:, 0]), np.abs(piece.y[:, 0]))))
    phi_emp = {}
    for k in np.unique(nball).astype(int):
        phi_emp[int(k)] = float(np.max(ratio[nball <= k]))
    if model.phi_local is not None:
        reps.append(_pair_report("W*5", "W*5", model, piece, tol, {"phiEmpirical": phi_emp}))
    elif not np.all(np.isfinite(ratio)):
        raise EvaluationError("W*5: non-finite difference quotient")

    reps.append(_point_report("W*", "W*", model, s.points(), tol))

    # declared side limits against numerical one-sided limits
    if len(xi):
        declared = np.asarray(model.side_limits, dtype=float).ravel()
        numeric = np.asarray([side_limits(model.b, v) for v in xi]).ravel()
        pts = np.repeat(xi, 2)[:, None]
        reps.append(_report("sideLimits", "sideLimits", np.abs(declared - numeric),
                            np.zeros_like(declared), pts, None, Tolerance(1e-6, 1e-6)))
    return combine_reports("A_b/W*", reps, {"phiEmpirical": phi_emp})


def default_sampler(model, seed: int = 0, n_random: int = 2000, radius: float = 10.0) -> PairSampler:
    ell0 = getattr(model, "ell0", None)
    anchors = getattr(model, "xi", ()) if model.regime == "piecewise" else ()
    return structured_pairs(model.dim, radius=radius, n_random=n_random, ell0=ell0,
                            anchors=anchors, seed=seed)


def verify_model(model, sampler: Optional[PairSampler] = None, tol=None) -> list[AssumptionReport]:
    """All verifiers applicable to the model's regime."""
    s = sampler if sampler is not None else default_sampler(model)
    reps = []
    if model.regime == "holder_dissipative":
        reps.append(verify_dissipativity_at_infinity(model, s, tol))
        reps.append(verify_holder(model, s, tol))
    elif model.regime == "monotone_lyapunov":
        reps.append(verify_monotone_lyapunov(model, s, tol))
        reps.append(verify_holder(model, s, tol))
    else:
        reps.append(verify_piecewise_assumptions(model, s, tol))
    reps.append(verify_ellipticity_lipschitz(model, s, tol))
    return reps


# --------------------------------------------------------------------------
# built-ins


def _const_sigma(c: float, dim: int):
    eye = c * np.eye(dim)

    def sigma(x):
        return np.broadcast_to(eye, (x.shape[0], dim, dim))
    return sigma


def _zero(x):
    return np.zeros_like(x)


def _holder_sqrt(c: float):
    def b0(x):
        return c * np.sign(x) * np.sqrt(np.abs(x))
    return b0


def double_well_b1(a: float, n: float):
    """-U' for U(x) = x^2 g^2 + a^2 - 2 a x g with g the clamp to [-n, n]."""
    def b1(x):
        inside = np.abs(x) <= n
        grad = np.where(inside, 4 * x ** 3 - 4 * a * x, 2 * n * n * x - 2 * a * n * np.sign(x))
        return -grad
    return b1


def make_ou(regime: str = "holder_dissipative", dim: int = 1, sigma: float = math.sqrt(2.0),
            **kw):
    sig = _const_sigma(sigma, dim)
    kappa = max(sigma ** 2, sigma ** -2)

    def b1(x):
        return -x
    if regime == "monotone_lyapunov":
        return MonotoneLyapunovModel(_zero, b1, sig, alpha=kw.get("alpha", 0.5), K1=kw.get("K1", 0.1),
                                     K2=kw.get("K2", 0.01), kappa=kw.get("kappa", kappa),
                                     lam=kw.get("lam", 0.1), lambda_star=kw.get("lambda_star", 1.0),
                                     C_lambda_star=kw.get("C_lambda_star", 0.0), dim=dim, name="ou")
    if regime != "holder_dissipative":
        raise ConfigError(f"ou does not support regime {regime!r}")
    return HolderDissipativeModel(_zero, b1, sig, alpha=kw.get("alpha", 0.5), K1=kw.get("K1", 0.1),
                                  lambda1=kw.get("lambda1", 1.0), lambda2=kw.get("lambda2", 2.0),
                                  ell0=kw.get("ell0", 1.0), K2=kw.get("K2", 0.01),
                                  kappa=kw.get("kappa", kappa), dim=dim, name="ou")


def make_double_well(regime: str = "holder_dissipative", a: float = 1.0, n: float = 2.0,
                     holder_coeff: float = 0.1, sigma: float = 1.0, **kw):
    if regime != "holder_dissipative":
        raise ConfigError(f"double_well does not support regime {regime!r}")
    b0 = _holder_sqrt(holder_coeff) if holder_coeff else _zero
    return HolderDissipativeModel(
        b0, double_well_b1(a, n), _const_sigma(sigma, 1), alpha=0.5,
        K1=kw.get("K1", max(holder_coeff, 1e-12) * math.sqrt(2.0)),
        lambda1=kw.get("lambda1", 8.0 * a), lambda2=kw.get("lambda2", 2.0),
        ell0=kw.get("ell0", 3.0), K2=kw.get("K2", 0.01),
        kappa=kw.get("kappa", max(sigma ** 2, sigma ** -2)), dim=1, name="double_well")


def make_sine_perturbed(regime: str = "monotone_lyapunov", amplitude: float = 1.2,
                        holder_coeff: float = 0.1, sigma: float = 1.0, **kw):
    """b1(x) = -x + A sin(x): monotone with lambda = 2(A-1) > 0 when A > 1."""
    if regime != "monotone_lyapunov":
        raise ConfigError(f"sine_perturbed does not support regime {regime!r}")
    A = float(amplitude)

    def b1(x):
        return -x + A * np.sin(x)
    return MonotoneLyapunovModel(
        _holder_sqrt(holder_coeff) if holder_coeff else _zero, b1, _const_sigma(sigma, 1),
        alpha=0.5, K1=kw.get("K1", max(holder_coeff, 1e-12) * math.sqrt(2.0)),
        K2=kw.get("K2", 0.01), kappa=kw.get("kappa", max(sigma ** 2, sigma ** -2)),
        lam=kw.get("lam", max(2 * (A - 1), 1e-3)),
        lambda_star=kw.get("lambda_star", 0.5), C_lambda_star=kw.get("C_lambda_star", A * A / 2),
        dim=1, name="sine_perturbed")


def piecewise_example_b(variant: str = "dissipative"):
    if variant == "literal":
        def b(x):
            return np.where(np.abs(x) < 1, 1 - x * x, -np.abs(x) - 2)
    elif variant == "dissipative":
        def b(x):
            return np.where(np.abs(x) < 1, 1 - x * x, -x - 2 * np.sign(x))
    else:
        raise ConfigError(f"unknown piecewise_example variant {variant!r}")
    return b


def piecewise_example_sigma(x):
    return 0.5 * (1 + 1 / (1 + x * x))


def make_piecewise_example(regime: str = "piecewise", variant: str = "dissipative",
                           eps_star: float = 0.25, **kw):
    if regime != "piecewise":
        raise ConfigError(f"piecewise_example does not support regime {regime!r}")
    b = piecewise_example_b(variant)
    if variant == "literal":
        limits = ((-3.0, 0.0), (0.0, -3.0))
    else:
        limits = ((3.0, 0.0), (0.0, -3.0))
    return PiecewiseModel(
        b, (-1.0, 1.0), piecewise_example_sigma, lambda_piece=kw.get("lambda_piece", 2.0),
        eps_star=eps_star, lambda_sharp=kw.get("lambda_sharp", 0.5),
        C_star=kw.get("C_star", 1.5), K2=kw.get("K2", 0.11), kappa=kw.get("kappa", 4.0),
        side_limits=limits, phi_local=kw.get("phi_local", lambda n: 2.0 * n),
        name="piecewise_example")


@dataclass(frozen=True)
class Builtin:
    name: str
    regimes: tuple
    factory: Callable
    defaults: dict
    description: str


BUILTINS: dict[str, Builtin] = {
    "ou": Builtin("ou", ("holder_dissipative", "monotone_lyapunov"), make_ou,
                  {"dim": 1, "sigma": math.sqrt(2.0)},
                  "Ornstein-Uhlenbeck b(x)=-x, sigma=sqrt(2): closed-form oracle"),
    "double_well": Builtin("double_well", ("holder_dissipative",), make_double_well,
                           {"a": 1.0, "n": 2.0, "holder_coeff": 0.1, "sigma": 1.0},
                           "b1=-U' with clamped quartic double well, b0=c sign(x)sqrt|x|"),
    "sine_perturbed": Builtin("sine_perturbed", ("monotone_lyapunov",), make_sine_perturbed,
                              {"amplitude": 1.2, "holder_coeff": 0.1, "sigma": 1.0},
                              "b1=-x+A sin(x) (Lipschitz perturbation with constant A>1), b0=c sign(x)sqrt|x|"),
    "piecewise_example": Builtin("piecewise_example", ("piecewise",), make_piecewise_example,
                                 {"variant": "dissipative", "eps_star": 0.25},
                                 "1-d drift 1-x^2 on |x|<1, jumps at +-1, sigma=(1+1/(1+x^2))/2"),
}


def get_builtin(name: str, regime: Optional[str] = None, **params):
    if name not in BUILTINS:
        raise ConfigError(f"unknown built-in model {name!r}")
    entry = BUILTINS[name]
    regime = regime or entry.regimes[0]
    if regime not in entry.regimes:
        raise ConfigError(f"model {name!r} does not support regime {regime!r}")
    model = entry.factory(regime=regime, **params)
    model.validate()
    return model


def list_builtins() -> list[dict]:
    return [{"name": b.name, "regimes": list(b.regimes), "defaults": b.defaults,
             "description": b.description} for b in BUILTINS.values()]
