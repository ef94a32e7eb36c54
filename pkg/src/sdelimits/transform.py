"""Drift-regularizing change of variables for 1-d piecewise models.

``G = id + U`` with ``U`` a sum of compact bumps
``alpha_i (x - xi_i)|x - xi_i| (1 - u^2)^4``, ``u = (x - xi_i)/delta``,
whose second derivative jumps by exactly the amount that cancels the drift
jump after Ito's formula.  The image process ``Y = G(X)`` has a continuous
drift ``(G'b + G'' sigma^2 / 2) o G^-1``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateDiffusionError, InternalError
from .integrate import PathEnsemble
from .model import (
    AssumptionReport,
    PairSampler,
    PiecewiseModel,
    Tolerance,
    _report,
    combine_reports,
    side_limits,
    structured_pairs,
)

log = logging.getLogger(__name__)

Array = np.ndarray


def _bump_u(w: Array, a: float, d: float) -> Array:
    """One bump at offset w from its centre; zero off the support."""
    u = w / d
    return np.where(np.abs(u) < 1, a * w * np.abs(w) * (1 - u * u) ** 4, 0.0)


def _bump_du(w: Array, a: float, d: float) -> Array:
    u = w / d
    return np.where(np.abs(u) < 1, 2 * a * np.abs(w) * (1 - u * u) ** 3 * (1 - 5 * u * u), 0.0)


@dataclass(frozen=True)
class BumpTransform:
    xi: Array
    alpha: Array
    delta: float
    eps_star: float
    jumps: Array  # b(xi+) - b(xi-)
    sigma_at_xi: Array

    def _parts(self, x: Array):
        """Flat positions inside each support with their offsets w and u = w/delta."""
        flat = np.asarray(x, dtype=float).reshape(-1)
        for xi, a in zip(self.xi, self.alpha):
            idx = np.flatnonzero(np.abs(flat - xi) < self.delta)
            w = flat[idx] - xi
            yield idx, w, w / self.delta, a

    def U(self, x) -> Array:
        out = np.zeros(np.size(x))
        for idx, w, u, a in self._parts(x):
            out[idx] += _bump_u(w, a, self.delta)
        return out.reshape(np.shape(x))

    def Uprime(self, x) -> Array:
        out = np.zeros(np.size(x))
        for idx, w, u, a in self._parts(x):
            out[idx] += _bump_du(w, a, self.delta)
        return out.reshape(np.shape(x))

    def Usecond(self, x) -> Array:
        """U''; at each xi the value 2(alpha + jump/sigma^2) is used."""
        out = np.zeros(np.size(x))
        for (idx, w, u, a), jmp, s in zip(self._parts(x), self.jumps, self.sigma_at_xi):
            u2 = u * u
            core = (1 - u2) ** 3 * (1 - 5 * u2) - 8 * u2 * (1 - u2) ** 2 * (2 - 5 * u2)
            out[idx] += np.where(w == 0, 2 * (a + jmp / s ** 2), 2 * a * np.sign(w) * core)
        return out.reshape(np.shape(x))

    def Gprime(self, x) -> Array:
        return 1.0 + self.Uprime(x)

    def G(self, x) -> Array:
        return np.asarray(x, dtype=float) + self.U(x)

    def max_abs_alpha(self) -> float:
        return float(np.max(np.abs(self.alpha))) if self.alpha.size else 0.0

    def to_dict(self) -> dict:
        return {"xi": self.xi.tolist(), "alpha": self.alpha.tolist(), "delta": self.delta,
                "epsStar": self.eps_star}


def delta_clauses(xi: Array, alpha: Array, eps_star: float) -> dict:
    out = {"one": 1.0}
    amax = float(np.max(np.abs(alpha))) if alpha.size else 0.0
    out["slope"] = eps_star / (32 * amax) if amax > 0 else np.inf
    if xi.size >= 2:
        out["gap"] = 0.5 * eps_star * float(np.min(np.diff(xi)))
    return out


def build_transform(model: PiecewiseModel, delta: Optional[float] = None) -> BumpTransform:
    """Bump coefficients and width; ``delta`` overrides the certified width."""
    xi = np.asarray(model.xi, dtype=float)
    lim = np.asarray(model.side_limits, dtype=float).reshape(-1, 2)
    sig = np.asarray(model.sigma(xi), dtype=float) if xi.size else np.zeros(0)
    if np.any(sig == 0):
        raise DegenerateDiffusionError(f"sigma vanishes at a discontinuity: xi={xi[sig == 0]}")
    alpha = (lim[:, 0] - lim[:, 1]) / (2 * sig ** 2) if xi.size else np.zeros(0)
    d = min(delta_clauses(xi, alpha, model.eps_star).values()) if delta is None else float(delta)
    return BumpTransform(xi, alpha, float(d), model.eps_star, lim[:, 1] - lim[:, 0] if xi.size
                         else np.zeros(0), sig)


def bump_certificates(bump: BumpTransform, n_grid: int = 20001) -> dict:
    """Grid checks of the bump bounds; each value is a boolean or a number."""
    cl = delta_clauses(bump.xi, bump.alpha, bump.eps_star)
    out = {"deltaClauses": {k: bool(bump.delta <= v * (1 + 1e-15)) for k, v in cl.items()}}
    out["deltaOk"] = all(out["deltaClauses"].values())
    if bump.xi.size == 0:
        out.update(maxAbsU=0.0, maxAbsUprime=0.0, UBoundOk=True, UprimeBoundOk=True,
                   vanishOffSupport=True, supportsDisjoint=True, peakBoundOk=True)
        return out
    xs = [np.linspace(x - bump.delta, x + bump.delta, n_grid) for x in bump.xi]
    grid = np.concatenate(xs)
    out["maxAbsU"] = float(np.max(np.abs(bump.U(grid))))
    out["maxAbsUprime"] = float(np.max(np.abs(bump.Uprime(grid))))
    out["UBoundOk"] = out["maxAbsU"] <= 1.0 / 3.0
    out["UprimeBoundOk"] = out["maxAbsUprime"] <= bump.eps_star
    off = np.concatenate([x + s * bump.delta * np.array([1.0, 1.0 + 1e-9, 1.5, 3.0])
                          for x in bump.xi for s in (-1, 1)])
    near_other = np.array([np.min(np.abs(o - bump.xi)) < bump.delta for o in off])
    off = off[~near_other]
    out["vanishOffSupport"] = bool(np.all(bump.U(off) == 0) and np.all(bump.Uprime(off) == 0))
    out["supportsDisjoint"] = bool(bump.xi.size < 2 or np.min(np.diff(bump.xi)) >= 2 * bump.delta)
    peaks = [float(np.max(np.abs(bump.Uprime(x)))) for x in xs]
    out["peakBoundOk"] = all(pk <= 32 * bump.delta * abs(a) for pk, a in zip(peaks, bump.alpha))
    return out


@dataclass(frozen=True)
class TransformedModel:
    """Image of a piecewise model under G; a 1-d model usable by integrators."""

    source: PiecewiseModel
    bump: BumpTransform
    kappa_star: float = 0.0
    K_star: float = 0.0
    lambda0: float = 0.0
    lambda0_star: float = 0.0
    C0: float = 0.0
    certificates: dict = field(default_factory=dict)
    dim = 1
    regime = "transformed"
    name: str = "transformed"

    @property
    def kappa(self) -> float:
        return self.kappa_star

    @property
    def K2(self) -> float:
        return self.K_star

    def G(self, x):
        return self.bump.G(x)

    def Ginv(self, y, tol: float = 1e-13, max_iter: int = 200) -> Array:
        """Safeguarded Newton with the bracket [y - 1/3, y + 1/3], one bump at a time."""
        y = np.asarray(y, dtype=float)
        out = y.copy()
        bp = self.bump
        flat = out.reshape(-1)
        yf = y.reshape(-1)
        d = bp.delta
        for xi, a in zip(bp.xi, bp.alpha):
            # supports are disjoint, so only this bump acts on y near xi
            idx = np.flatnonzero(np.abs(yf - xi) < d + abs(a) * d * d + 1e-12)
            if idx.size == 0:
                continue
            c = yf[idx] - xi
            scale = np.maximum(1.0, np.abs(yf[idx]))
            lo, hi = c - 1.0 / 3.0, c + 1.0 / 3.0
            if np.any(lo + _bump_u(lo, a, d) > c) or np.any(hi + _bump_u(hi, a, d) < c):
                raise InternalError("G^-1 bracket does not enclose the root")
            w = c - _bump_u(c, a, d)
            for _ in range(max_iter):
                gw = w + _bump_u(w, a, d) - c
                lo = np.where(gw < 0, w, lo)
                hi = np.where(gw > 0, w, hi)
                wn = w - gw / (1.0 + _bump_du(w, a, d))
                wn = np.where((wn <= lo) | (wn >= hi), 0.5 * (lo + hi), wn)
                done = np.abs(wn - w) <= tol * scale
                w = wn
                if np.all(done):
                    break
            else:
                raise InternalError("G^-1 did not converge")
            flat[idx] = xi + w
        return out

    def _near(self, y: Array) -> Array:
        """Flat indices of states whose preimage may lie inside a bump."""
        bp = self.bump
        reach = bp.delta + bp.max_abs_alpha() * bp.delta ** 2 + 1e-12
        flat = y.reshape(-1)
        m = np.zeros(flat.shape, dtype=bool)
        for xi in bp.xi:
            m |= np.abs(flat - xi) < reach
        return np.flatnonzero(m)

    def b_tilde(self, y) -> Array:
        # off the bumps G is the identity and b~ = b
        y = np.asarray(y, dtype=float)
        out = np.array(self.source.b(y), dtype=float).reshape(-1)
        idx = self._near(y)
        if idx.size:
            x = self.Ginv(y.reshape(-1)[idx])
            s = self.source.sigma(x)
            out[idx] = self.bump.Gprime(x) * self.source.b(x) + 0.5 * self.bump.Usecond(x) * s * s
        return out.reshape(y.shape)

    def sigma_tilde(self, y) -> Array:
        y = np.asarray(y, dtype=float)
        out = np.array(self.source.sigma(y), dtype=float).reshape(-1)
        idx = self._near(y)
        if idx.size:
            x = self.Ginv(y.reshape(-1)[idx])
            out[idx] = self.bump.Gprime(x) * self.source.sigma(x)
        return out.reshape(y.shape)

    def coefficients(self, y) -> tuple[Array, Array]:
        """(b~, sigma~) at y with one shared G^-1 solve."""
        y = np.asarray(y, dtype=float)
        b = np.array(self.source.b(y), dtype=float).reshape(-1)
        s = np.array(self.source.sigma(y), dtype=float).reshape(-1)
        idx = self._near(y)
        if idx.size:
            x = self.Ginv(y.reshape(-1)[idx])
            sx, gp = self.source.sigma(x), self.bump.Gprime(x)
            b[idx] = gp * self.source.b(x) + 0.5 * self.bump.Usecond(x) * sx * sx
            s[idx] = gp * sx
        return b.reshape(y.shape), s.reshape(y.shape)

    def drift_and_diffusion(self, y: Array) -> tuple[Array, Array]:
        b, s = self.coefficients(y[:, 0])
        return b[:, None], s[:, None, None]

    def drift(self, y: Array) -> Array:
        return self.b_tilde(y[:, 0])[:, None]

    def diffusion(self, y: Array) -> Array:
        return self.sigma_tilde(y[:, 0])[:, None, None]

    def constants(self) -> dict:
        return {"kappaStar": self.kappa_star, "KStar": self.K_star, "lambda0": self.lambda0,
                "lambda0Star": self.lambda0_star, "C0": self.C0}

    def summary(self) -> dict:
        return {**self.bump.to_dict(), "certifiedConstants": self.constants(),
                "certificates": self.certificates}

    def to_json(self, path) -> None:
        from .model import _jsonable
        with open(path, "w") as fh:
            json.dump(_jsonable(self.summary()), fh, indent=2, sort_keys=True)


def _cert_grid(bump: BumpTransform, radius: float) -> Array:
    base = np.linspace(-radius, radius, 40001)
    extra = []
    for x in bump.xi:
        extra.append(x + np.linspace(-bump.delta, bump.delta, 4000))
        extra.append(x + np.array([-1e-3, -1e-6, 1e-6, 1e-3]))
    pts = np.unique(np.concatenate([base, *extra]) if extra else base)
    # the xi themselves carry the prescribed U'' value, a removable point defect
    return pts[~np.isin(pts, bump.xi)]


def apply_transform(model: PiecewiseModel, bump: BumpTransform, radius: float = 50.0,
                    margin: float = 1.25) -> TransformedModel:
    """Assemble the transformed coefficients and certify them on a grid.

    Constants are grid suprema inflated by ``margin`` (grid points miss the
    exact extrema by a small amount).
    """
    tm = TransformedModel(model, bump)
    x = _cert_grid(bump, radius)
    y = tm.G(x)
    if np.any(np.diff(y) <= 0):
        raise InternalError("G is not strictly increasing on the grid")
    rt = tm.Ginv(y)
    gp = bump.Gprime(x)
    sig_t = tm.sigma_tilde(y)
    bt = tm.b_tilde(y)
    s2 = sig_t ** 2
    kappa_star = float(max(1.0, np.max(s2), 1.0 / np.min(s2))) * margin
    dy = np.diff(y)
    K_star = float(np.max((np.diff(sig_t) / dy) ** 2)) * margin
    lam0 = float(max(np.max(2 * np.diff(bt) / dy), 1e-3)) * margin

    # Lyapunov pair: rate half of the asymptotic one, offset from the grid
    far = np.abs(y) > 0.5 * radius
    rate_far = float(np.min(-bt[far] / y[far])) if np.any(far) else 1.0
    lam_star = 0.5 * rate_far
    C0 = float(np.max(y * bt + lam_star * y * y))
    C0 = C0 * margin if C0 > 0 else 1e-9

    gaps = []
    for xi in bump.xi:
        left, right = side_limits(tm.b_tilde, float(bump.G(xi)), delta0=1e-3 * bump.delta)
        gaps.append(abs(right - left))
    certs = {
        "GprimeMin": float(gp.min()), "GprimeMax": float(gp.max()),
        "GprimeOk": bool(gp.min() >= 0.5 and gp.max() <= 1.5),
        "roundTripMax": float(np.max(np.abs(rt - x))),
        "bTildeGaps": gaps,
        "asymptoticRate": rate_far,
        "lyapunovOk": bool(rate_far > 0),
    }
    certs["roundTripOk"] = certs["roundTripMax"] <= 1e-12
    certs["continuityOk"] = bool(all(g <= 1e-6 for g in gaps))
    certs["bump"] = bump_certificates(bump)
    return TransformedModel(model, bump, kappa_star, K_star, lam0, lam_star, C0, certs)


def _tm_sides(check: str, tm: TransformedModel, x: Array, y: Optional[Array]):
    if check == "sigma-lower":
        return np.full(x.shape[0], 1.0 / tm.kappa_star), tm.sigma_tilde(x[:, 0]) ** 2
    if check == "sigma-upper":
        return tm.sigma_tilde(x[:, 0]) ** 2, np.full(x.shape[0], tm.kappa_star)
    if check == "lipschitz":
        ds = tm.sigma_tilde(x[:, 0]) - tm.sigma_tilde(y[:, 0])
        return ds * ds, tm.K_star * (x[:, 0] - y[:, 0]) ** 2
    if check == "onesided":
        dx = x[:, 0] - y[:, 0]
        return 2 * dx * (tm.b_tilde(x[:, 0]) - tm.b_tilde(y[:, 0])), tm.lambda0 * dx * dx
    if check == "lyapunov":
        v = x[:, 0]
        return v * tm.b_tilde(v), -tm.lambda0_star * v * v + tm.C0
    raise KeyError(check)


def transformed_sampler(tm: TransformedModel, seed: int = 0, radius: float = 100.0) -> PairSampler:
    anchors = list(tm.G(tm.bump.xi)) if tm.bump.xi.size else []
    s = structured_pairs(1, radius=radius, n_random=2000, anchors=anchors, seed=seed)
    # pairs across and around each image discontinuity at bump scale
    rng = np.random.default_rng(seed + 1)
    xs, ys = [s.x], [s.y]
    for a in anchors:
        u = a + tm.bump.delta * rng.uniform(-2, 2, (500, 1))
        v = a + tm.bump.delta * rng.uniform(-2, 2, (500, 1))
        xs.append(u)
        ys.append(v)
    return PairSampler(np.concatenate(xs), np.concatenate(ys), seed)


def certify_transformed_assumptions(tm: TransformedModel, sampler: Optional[PairSampler] = None,
                                    tol=None) -> list[AssumptionReport]:
    """Ellipticity, Lipschitz sigma~, one-sided Lipschitz b~, Lyapunov b~."""
    s = sampler if sampler is not None else transformed_sampler(tm)
    tol = tol if isinstance(tol, Tolerance) else Tolerance() if tol is None else Tolerance(tol, 0.0)
    pts = s.points()
    dist = s.distinct()

    def rep(aid, check, x, y):
        lhs, rhs = _tm_sides(check, tm, x, y)
        return _report(aid, check, lhs, rhs, x, y, tol)
    ell = combine_reports("H_sigma~ ellipticity", [rep("ellipticity", "sigma-lower", pts, None),
                                                   rep("ellipticity", "sigma-upper", pts, None)])
    return [
        ell,
        rep("H_sigma~ Lipschitz", "lipschitz", dist.x, dist.y),
        rep("H_b~ one-sided", "onesided", dist.x, dist.y),
        rep("H_b~ Lyapunov", "lyapunov", pts, None),
    ]


def pushforward_paths(ensemble: PathEnsemble, tm: TransformedModel, direction: str) -> PathEnsemble:
    """Map every state of a 1-d ensemble through G or G^-1."""
    if ensemble.dim != 1:
        raise ValueError("push-forward is defined for 1-d ensembles")
    if direction == "G":
        fn = tm.G
    elif direction == "Ginv":
        fn = tm.Ginv
    else:
        raise ValueError("direction must be 'G' or 'Ginv'")
    return ensemble.map_states(fn)
