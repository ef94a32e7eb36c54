"""Concave coupling test functions and the constants built from them.

Two constructions:

* the separation-regime function ``f(r) = k int_0^r e^{-k Phi(u)/2}
  int_u^inf s e^{k Phi(s)/2} ds du`` driven by the drift bound ``phi``
  with cutoff ``hbar0``;
* the Lyapunov-regime pair ``h`` and ``f = c*(r ^ l)^theta + h(r ^ l)``
  together with the prefactor ``c*``, the tuning parameter ``eps`` and the
  Lyapunov radius ``l``.

Both are tabulated by nested adaptive quadrature and certified on the grid.
"""
from __future__ import annotations

import io
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, optimize

from .errors import CertificationError, ConstructionError, DomainError
from .model import (
    default_sampler,
    verify_ellipticity_lipschitz,
    verify_holder,
    verify_monotone_lyapunov,
)

log = logging.getLogger(__name__)

Array = np.ndarray

QUAD_ABS = 1e-12
QUAD_REL = 1e-10


def _quad(fn, a: float, b: float) -> float:
    """scipy ``quad`` held to the table's accuracy target."""
    if b == a:
        return 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(fn, a, b, epsabs=QUAD_ABS * 1e-2, epsrel=QUAD_REL * 1e-2,
                                      limit=200)
        except integrate.IntegrationWarning as exc:
            raise ConstructionError(f"quadrature on [{a}, {b}] failed: {exc}") from exc
    if err > max(QUAD_ABS, QUAD_REL * abs(val)):
        raise ConstructionError(f"quadrature on [{a}, {b}] reached only {err:.2e}")
    return val


def fornberg_weights(x0: float, nodes: Array, m: int) -> Array:
    """Finite-difference weights for the m-th derivative at x0 (Fornberg 1988)."""
    n = len(nodes)
    c = np.zeros((n, m + 1))
    c1, c4 = 1.0, nodes[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2, c5, c4 = 1.0, c4, nodes[i] - x0
        for j in range(i):
            c3 = nodes[i] - nodes[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


def fd_derivative(r: Array, v: Array, lo: int, hi: int, diffs: Optional[Array] = None) -> Array:
    """5-point first derivative of ``v`` at indices lo..hi-1 (stencil inside).

    ``diffs[i] = v[i] - v[i+1]``, when given, is used to form ``v[j] - v[i]``
    without cancellation; the weights sum to zero so only differences matter.
    """
    out = np.full(r.size, np.nan)
    if diffs is not None:
        cum = np.concatenate([[0.0], np.cumsum(-np.asarray(diffs))])
    for i in range(lo, hi):
        idx = np.arange(i - 2, i + 3)
        w = fornberg_weights(r[i], r[idx], 1)
        if diffs is None:
            out[i] = w @ v[idx]
        else:
            rel = np.array([_segment(diffs, cum, i, j) for j in idx])
            out[i] = w @ rel
    return out


def _segment(diffs: Array, cum: Array, i: int, j: int) -> float:
    """v[j] - v[i] from consecutive differences."""
    if j == i:
        return 0.0
    if j > i:
        return -float(np.sum(diffs[i:j]))
    return float(np.sum(diffs[j:i]))


# --------------------------------------------------------------------------
# separation regime


@dataclass(frozen=True)
class PhiProfile:
    lambda1: float
    lambda2: float
    K1: float
    alpha: float
    kappa: float
    K2: float
    d: int
    ell0: float
    hbar0: float

    @property
    def noise_coef(self) -> float:
        return 16.0 * self.kappa ** 3.25 * self.d ** 0.25 * self.K2 ** 0.75

    def phi(self, u):
        u = np.asarray(u, dtype=float)
        inner = (self.lambda1 + self.lambda2) * u + 2 * self.K1 * u ** self.alpha \
            + self.noise_coef * np.sqrt(u)
        return inner * (u <= self.hbar0) - 0.5 * self.lambda2 * u

    def Phi(self, u):
        """Closed-form primitive of ``phi`` from 0."""
        u = np.asarray(u, dtype=float)
        v = np.minimum(u, self.hbar0)
        a = self.alpha
        inner = 0.5 * (self.lambda1 + self.lambda2) * v * v + 2 * self.K1 * v ** (a + 1) / (a + 1) \
            + (2.0 / 3.0) * self.noise_coef * v ** 1.5
        return inner - 0.25 * self.lambda2 * u * u


def hbar0_terms(ell0, K1, lambda2, alpha, kappa, d, K2) -> tuple[float, float, float]:
    if alpha == 1:
        raise DomainError("alpha = 1 makes the Holder cutoff exponent 1/(1-alpha) blow up")
    if not (0 < alpha < 1):
        raise DomainError("alpha must lie in (0,1)")
    if min(ell0, K1, lambda2, K2, d) <= 0 or kappa < 1:
        raise DomainError("constants must be positive and kappa >= 1")
    t1 = float(ell0)
    t2 = (8.0 * K1 / lambda2) ** (1.0 / (1.0 - alpha))
    t3 = (64.0 * kappa ** 3.25 * d ** 0.25 * K2 ** 0.75 / lambda2) ** 2
    return t1, t2, t3


def compute_hbar0(lambda1: float, lambda2: float, K1: float, alpha: float, kappa: float,
                  K2: float, d: int, ell0: float) -> PhiProfile:
    if lambda1 <= 0:
        raise DomainError("lambda1 must be positive")
    h = max(hbar0_terms(ell0, K1, lambda2, alpha, kappa, d, K2))
    return PhiProfile(lambda1, lambda2, K1, alpha, kappa, K2, d, ell0, h)


def profile_from_model(model) -> PhiProfile:
    return compute_hbar0(model.lambda1, model.lambda2, model.K1, model.alpha, model.kappa,
                         model.K2, model.dim, model.ell0)


@dataclass(frozen=True)
class TestFunctionTable:
    kind: str
    r: Array
    f: Array
    fprime: Array
    bound_constants: dict
    params: dict
    certificates: dict = field(default_factory=dict)
    residual: Optional[Array] = None

    __test__ = False  # not a pytest class

    def __call__(self, r):
        return np.interp(r, self.r, self.f)

    def header(self) -> dict:
        return {"kind": self.kind, "boundConstants": self.bound_constants,
                "params": self.params, "certificates": self.certificates}

    def to_csv(self, path) -> None:
        buf = io.StringIO()
        buf.write("# " + json.dumps(self.header(), sort_keys=True) + "\n")
        buf.write("r,f,f'\n")
        np.savetxt(buf, np.column_stack([self.r, self.f, self.fprime]), delimiter=",", fmt="%.17g")
        with open(path, "w") as fh:
            fh.write(buf.getvalue())


def _clustered(a: float, b: float, n: int, both: bool) -> Array:
    """n+1 nodes on [a, b] clustered quadratically at a (and at b if ``both``)."""
    s = np.linspace(0.0, 1.0, n + 1)
    w = 0.5 * (1 - np.cos(np.pi * s)) if both else 1 - np.cos(0.5 * np.pi * s)
    x = a + (b - a) * w
    x[0], x[-1] = a, b
    return x


def log_grid(a: float, b: float, n: int, r_min_rel: float = 1e-14) -> Array:
    """0, then log-spaced radii up to ``b``; two decades of ratio for the
    tiny radii and a finer ratio on the last three decades."""
    r_min = r_min_rel * b
    split = 1e-3 * b
    n_fine = (5 * n) // 8
    coarse = np.geomspace(r_min, split, n - n_fine)
    fine = np.geomspace(split, b, n_fine + 1)[1:]
    out = np.concatenate([[a], coarse, fine])
    out[-1] = b
    return out


def section2_grid(hbar0: float, n_grid: int = 2048, r_max: Optional[float] = None) -> tuple[Array, int]:
    """Log-spaced radii on (0, hbar0] (hbar0 is a node) plus a block beyond it
    clustered at the kink; returns the grid and the index of hbar0."""
    r_max = 2.0 * hbar0 if r_max is None else r_max
    n_left = (15 * n_grid) // 16
    left = log_grid(0.0, hbar0, n_left)
    right = _clustered(hbar0, r_max, n_grid - 1 - n_left, both=False)
    return np.concatenate([left, right[1:]]), left.size - 1


def _tail_end(integrand, r: float) -> float:
    """Point beyond the peak where the integrand drops below 1e-16 of the peak."""
    res = optimize.minimize_scalar(lambda s: -integrand(s), bounds=(r, 10 * r + 10), method="bounded")
    s_pk = res.x if integrand(res.x) > integrand(r) else r
    peak = integrand(s_pk)
    hi = max(2 * s_pk, s_pk + 1.0)
    while integrand(hi) > 1e-16 * peak:
        hi *= 2
    return optimize.brentq(lambda s: integrand(s) - 1e-16 * peak, s_pk, hi, xtol=1e-12)


def _fprime_tables(r: Array, g, kappa: float, weight, top_value: float):
    """f'(r_i) by the downward recursion
    f'(r_i) = e^{g(r_{i+1})-g(r_i)} f'(r_{i+1}) + k int_{r_i}^{r_{i+1}} w(s) e^{g(s)-g(r_i)} ds.

    Also returns the accurately formed differences f'(r_i) - f'(r_{i+1}).
    """
    m = r.size
    fp = np.empty(m)
    diffs = np.empty(m - 1)
    fp[-1] = top_value
    gr = np.array([g(v) for v in r])
    for i in range(m - 2, -1, -1):
        gi = gr[i]
        inc = _quad(lambda s: weight(s) * math.exp(g(s) - gi), r[i], r[i + 1])
        diffs[i] = math.expm1(gr[i + 1] - gi) * fp[i + 1] + kappa * inc
        fp[i] = fp[i + 1] + diffs[i]
    return fp, diffs


def _f_values(r: Array, fp: Array, g, kappa: float, weight) -> Array:
    """f(r_i) = f(r_{i-1}) + int f' with f'(u) expanded from the right node."""
    f = np.zeros(r.size)
    for i in range(1, r.size):
        ri, gri, fpi = r[i], g(r[i]), fp[i]

        def fprime(u, ri=ri, gri=gri, fpi=fpi):
            gu = g(u)
            return math.exp(gri - gu) * fpi + kappa * _quad(lambda s: weight(s) * math.exp(g(s) - gu), u, ri)
        f[i] = f[i - 1] + _quad(fprime, r[i - 1], ri)
    return f


def build_section2_f(profile: PhiProfile, n_grid: int = 2048, r_max: Optional[float] = None,
                     residual_tol: float = 1e-6) -> TestFunctionTable:
    """Tabulate the separation-regime test function and certify it."""
    k = profile.kappa
    hb = profile.hbar0
    r, i_h = section2_grid(hb, n_grid, r_max)

    lin, hc, nc, a = 0.5 * (profile.lambda1 + profile.lambda2), 2 * profile.K1 / (profile.alpha + 1), \
        (2.0 / 3.0) * profile.noise_coef, profile.alpha + 1
    q = 0.25 * profile.lambda2

    def g(s):
        v = s if s < hb else hb
        return 0.5 * k * (lin * v * v + hc * v ** a + nc * v ** 1.5 - q * s * s)

    def weight(s):
        return s

    r_top = r[-1]
    g_top = g(r_top)

    def tail(s):
        return s * math.exp(g(s) - g_top)
    s_end = _tail_end(tail, r_top)
    top = k * _quad(tail, r_top, s_end)
    fp, dfp_acc = _fprime_tables(r, g, k, weight, top)
    f = _f_values(r, fp, g, k, weight)

    # certify
    fpp = fd_derivative(r, fp, 2, r.size - 2, dfp_acc)
    phi = profile.phi(r)
    resid = 0.5 * fp * phi + fpp / k + r
    near = np.abs(np.arange(r.size) - i_h) <= 2
    check = np.isfinite(resid) & ~near
    rratio = f[1:] / r[1:]
    c_lo = float(rratio.min())
    c_hi = float(max(rratio.max(), fp[0]))
    beyond = r >= hb
    dfp = np.diff(fp)
    certs = {
        "f0IsZero": bool(f[0] == 0.0),
        "fprimePositive": bool(np.all(fp > 0)),
        "concave": bool(np.all(dfp <= 1e-12 * np.abs(fp[1:]))),
        "slopeBeyondCutoff": float(np.max(np.abs(fp[beyond] - 4.0 / profile.lambda2))),
        "maxScaledResidual": float(np.max(np.abs(resid[check]) / (1 + r[check]))),
        "residualPoints": int(check.sum()),
        "sandwichPositive": bool(c_lo > 0 and np.isfinite(c_hi)),
        "tailTruncation": float(s_end),
    }
    certs["slopeBeyondCutoffOk"] = certs["slopeBeyondCutoff"] <= 1e-8
    certs["residualOk"] = certs["maxScaledResidual"] <= residual_tol
    certs["sandwichOk"] = bool(np.all(c_lo * r <= f + 1e-12) and np.all(f <= c_hi * r + 1e-12))
    certs["passed"] = all(certs[k_] for k_ in ("f0IsZero", "fprimePositive", "concave",
                                               "slopeBeyondCutoffOk", "residualOk",
                                               "sandwichPositive", "sandwichOk"))
    params = {f_: getattr(profile, f_) for f_ in
              ("lambda1", "lambda2", "K1", "alpha", "kappa", "K2", "d", "ell0", "hbar0")}
    return TestFunctionTable("section2", r, f, fp, {"c_lower": c_lo, "c_upper": c_hi},
                             params, certs, resid)


# --------------------------------------------------------------------------
# Lyapunov regime


def lyapunov_generator(model, x: Array, p: float) -> Array:
    """(L V_p)(x) for V_p = 1 + |x|^p, rows of ``x``."""
    b = model.drift(x)
    s = model.diffusion(x)
    a = s @ np.swapaxes(s, 1, 2)
    r2 = np.einsum("ij,ij->i", x, x)
    r = np.sqrt(r2)
    xb = np.einsum("ij,ij->i", x, b)
    tr = np.trace(a, axis1=1, axis2=2)
    xax = np.einsum("ni,nij,nj->n", x, a, x)
    with np.errstate(divide="ignore", invalid="ignore"):
        rp2 = np.where(r > 0, r ** (p - 2), 1.0 if p == 2 else 0.0)
        rp4 = np.where(r > 0, r ** (p - 4), 0.0) if p != 2 else np.zeros_like(r)
    return p * rp2 * xb + 0.5 * (p * rp2 * tr + p * (p - 2) * rp4 * xax)


@dataclass(frozen=True)
class LyapunovConstants:
    C1: float
    C2: float
    lp_star: float
    C1_max: float
    p: float
    r_max: float

    def to_dict(self) -> dict:
        return {"C1": self.C1, "C2": self.C2, "lpStar": self.lp_star, "C1max": self.C1_max,
                "p": self.p, "rMax": self.r_max}


def lp_star_from(C1: float, C2: float, p: float) -> float:
    return 1.0 + 2.0 * max(4.0 * C2 / C1 - 1.0, 0.0) ** (1.0 / p)


def _radial_points(dim: int, r_max: float, n_radial: int, n_dirs: int, seed: int = 0):
    r = np.linspace(0.0, r_max, n_radial)
    if dim == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        rng = np.random.default_rng(seed)
        v = rng.standard_normal((n_dirs, dim))
        dirs = np.concatenate([np.eye(dim), -np.eye(dim), v / np.linalg.norm(v, axis=1, keepdims=True)])
    return r, dirs


def compute_lp_star(model, p: float = 2.0, r_max: float = 20.0, n_radial: int = 4001,
                    n_dirs: int = 16, check_preconditions: bool = True) -> LyapunovConstants:
    """Certify (L V_p) <= -C1 V_p + C2 on a radial window and derive l_p*.

    The largest certifiable C1 is bisected; half of it is used so that C2
    stays moderate.  Certifiable means: the bound function L V_p + C1 V_p is
    nonincreasing along every ray on the outer half of the window.
    """
    if p < 2:
        raise DomainError("p must be >= 2")
    if check_preconditions:
        s = default_sampler(model, n_random=500)
        for rep in (verify_ellipticity_lipschitz(model, s),
                    verify_monotone_lyapunov(model, s) if model.regime == "monotone_lyapunov" else None,
                    verify_holder(model, s) if hasattr(model, "b0") else None):
            if rep is not None and not rep.passed:
                raise CertificationError(f"precondition {rep.assumption_id} failed at {rep.witness}")
    r, dirs = _radial_points(model.dim, r_max, n_radial, n_dirs)
    pts = (r[None, :, None] * dirs[:, None, :]).reshape(-1, model.dim)
    lv = lyapunov_generator(model, pts, p).reshape(dirs.shape[0], r.size)
    vp = 1.0 + r ** p
    outer = r >= 0.5 * r_max

    def bound(c1):
        return lv + c1 * vp[None, :]

    def certifiable(c1):
        g = bound(c1)
        if not np.all(np.isfinite(g)):
            return False
        dg = np.diff(g[:, outer], axis=1)
        return bool(np.all(dg <= 1e-9 * (1 + np.abs(g[:, outer][:, 1:]))))

    c = 1.0
    if certifiable(c):
        while certifiable(2 * c) and c < 2 ** 20:
            c *= 2
        lo, hi = c, 2 * c
    else:
        while not certifiable(c):
            c /= 2
            if c < 1e-8:
                raise CertificationError("no C1 certifiable on the radial window")
        lo, hi = c, 2 * c
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if certifiable(mid):
            lo = mid
        else:
            hi = mid
    c1 = 0.5 * lo
    c2 = float(np.max(bound(c1)))
    if c2 <= 0:
        c2 = float(np.finfo(float).eps)
    return LyapunovConstants(c1, c2, lp_star_from(c1, c2, p), lo, float(p), float(r_max))


@dataclass(frozen=True)
class Section3Constants:
    c_star: float
    r0: float
    epsilon: float
    eps_caps: tuple
    c_sharp: float
    lp_star: float
    C1p: float
    C2p: float
    h_prime0: float
    contraction_rate: float

    def to_dict(self) -> dict:
        return {"c_star": self.c_star, "r0": self.r0, "epsilon": self.epsilon,
                "epsCaps": list(self.eps_caps), "cSharp": self.c_sharp, "lpStar": self.lp_star,
                "C1p": self.C1p, "C2p": self.C2p, "hPrime0": self.h_prime0,
                "contractionRate": self.contraction_rate}


@dataclass(frozen=True)
class Section3Build:
    f_table: TestFunctionTable
    h_table: TestFunctionTable
    constants: Section3Constants


def section3_constants(lam, K1, K2, kappa, alpha, theta, p, lyap: LyapunovConstants,
                       h_prime0: float) -> Section3Constants:
    l = lyap.lp_star
    if theta < 1:
        r0 = min(1.0, ((1 - theta) / (2 * K1 * kappa)) ** (1.0 / (1 + alpha)))
        c_star = 1.0 / (theta * (lam + 4 * K2 * kappa ** 3 + 2 * K1 * r0 ** (alpha - 1)))
    else:
        r0 = 1.0  # formula degenerates to 0; irrelevant since c* vanishes
        c_star = 0.0
    c_sharp = max((1.0 / kappa) * 2.0 ** max(p - 2, 1) * (p - 1), 2 * math.sqrt(K2) * kappa ** 2)
    top = c_star + h_prime0 * l ** (1 - theta)
    cap1 = 1.0 / (16 * lyap.C2 * top)
    pm2 = 1.0 if p == 2 else (p - 2) ** (1 - 2 / p)
    mix = max(pm2, (p - 1) ** (1 - 1 / p))
    cap2 = 1.0 / (2 ** (4 + 4 / p) * c_sharp * mix * (c_star * theta + h_prime0 * l ** (1 - theta))) ** p
    eps = min(1.0, cap1, cap2)
    rate = min(1.0 / (4 * top), lyap.C1 * eps / (1 + 2 * eps))
    return Section3Constants(c_star, r0, eps, (cap1, cap2), c_sharp, l, lyap.C1, lyap.C2,
                             h_prime0, rate)


def build_section3_f(lam: float, K1: float, K2: float, kappa: float, alpha: float, theta: float,
                     p: float, lyap: LyapunovConstants, n_grid: int = 2048,
                     slack: float = 1e-8) -> Section3Build:
    """Tabulate ``h`` on [0, l] and ``f = c* (r^l)^theta + h(r^l)`` on [0, 2l]."""
    if not (0 < theta <= 1):
        raise DomainError("theta must lie in (0,1]")
    l = lyap.lp_star
    if l < 1:
        raise DomainError("lp_star must be >= 1")
    lin = lam + 4 * K2 * kappa ** 3

    def g(u):
        return 0.5 * kappa * (0.5 * lin * u * u + 2 * K1 * u ** (alpha + 1) / (alpha + 1))

    def weight(s):
        return s ** theta

    n_h = (7 * n_grid) // 8
    r = log_grid(0.0, l, n_h)
    hp, dhp_acc = _fprime_tables(r, g, kappa, weight, 0.0)
    h = _f_values(r, hp, g, kappa, weight)

    # h ODE: h' psi/2 + h''/kappa = -r^theta, residual relative to term size
    hpp = fd_derivative(r, hp, 2, r.size - 2, dhp_acc)
    psi = lin * r + 2 * K1 * r ** alpha
    terms = np.abs(0.5 * hp * psi) + np.abs(hpp / kappa) + r ** theta
    hres = (0.5 * hp * psi + hpp / kappa + r ** theta) / terms
    ok = np.isfinite(hres)
    h_certs = {"h0IsZero": bool(h[0] == 0.0), "hprime0Positive": bool(hp[0] > 0),
               "maxRelativeResidual": float(np.max(np.abs(hres[ok])))}
    const = section3_constants(lam, K1, K2, kappa, alpha, theta, p, lyap, float(hp[0]))
    params = {"lambda": lam, "K1": K1, "K2": K2, "kappa": kappa, "alpha": alpha,
              "theta": theta, "p": p, "lpStar": l}
    h_tab = TestFunctionTable("section3_h", r, h, hp, {"hPrime0": float(hp[0])}, params,
                              h_certs, hres)

    r_ext = _clustered(l, 2 * l, n_grid - 1 - n_h, both=False)[1:]
    rf = np.concatenate([r, r_ext])
    rc = np.minimum(rf, l)
    f = const.c_star * rc ** theta + np.concatenate([h, np.full(r_ext.size, h[-1])])
    with np.errstate(divide="ignore"):
        power_slope = const.c_star * theta * r ** (theta - 1) if const.c_star > 0 else np.zeros(r.size)
    fp = np.concatenate([power_slope + hp, np.zeros(r_ext.size)])
    upper = const.c_star + const.h_prime0 * l ** (1 - theta)
    inside = (rf > 0) & (rf <= l)
    rt = rf[inside] ** theta
    lo_gap = const.c_star * rt - f[inside]
    hi_gap = f[inside] - upper * rt
    scale = np.maximum(1.0, np.abs(f[inside]))
    df = np.diff(f[rf <= l])
    dfp = np.diff(fp[inside])
    certs = {
        "sandwichLowerExcess": float(np.max(lo_gap / scale)),
        "sandwichUpperExcess": float(np.max(hi_gap / scale)),
        "constantBeyond": bool(np.all(f[rf >= l] == f[rf >= l][0])),
        "nondecreasing": bool(np.all(df >= -slack * np.abs(f[rf <= l][1:]))),
        "concave": bool(theta == 1 or np.all(dfp <= slack * np.abs(fp[inside][1:]))),
        "epsilonOk": bool(0 < const.epsilon <= 1 and const.epsilon <= min(const.eps_caps)),
        "hResidual": h_certs["maxRelativeResidual"],
    }
    certs["sandwichOk"] = certs["sandwichLowerExcess"] <= slack and certs["sandwichUpperExcess"] <= slack
    certs["passed"] = all(certs[k] for k in ("sandwichOk", "constantBeyond", "nondecreasing",
                                             "concave", "epsilonOk"))
    f_tab = TestFunctionTable("section3_f", rf, f, fp,
                              {"c_star": const.c_star, "hPrime0": const.h_prime0, "lpStar": l},
                              params, certs)
    return Section3Build(f_tab, h_tab, const)
