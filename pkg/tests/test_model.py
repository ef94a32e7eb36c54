import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdelimits.errors import ConfigError, InputError, IntervalStraddleError
from sdelimits.model import (
    CHECKS,
    HolderDissipativeModel,
    MonotoneLyapunovModel,
    PairSampler,
    PiecewiseModel,
    Tolerance,
    default_sampler,
    get_builtin,
    list_builtins,
    replay_witness,
    side_limits,
    structured_pairs,
    verify_dissipativity_at_infinity,
    verify_ellipticity_lipschitz,
    verify_holder,
    verify_model,
    verify_monotone_lyapunov,
    verify_piecewise_assumptions,
)


def const_sigma(c, d=1):
    return lambda x: np.broadcast_to(c * np.eye(d), (x.shape[0], d, d))


def zero(x):
    return np.zeros_like(x)


def holder_model(b0=zero, b1=lambda x: -x, sigma=const_sigma(1.0), **kw):
    p = dict(alpha=0.5, K1=1.0, lambda1=1.0, lambda2=2.0, ell0=1.0, K2=1.0, kappa=1.0, dim=1)
    p.update(kw)
    return HolderDissipativeModel(b0, b1, sigma, **p)


def pair(x, y):
    return PairSampler(np.atleast_2d(x), np.atleast_2d(y))


SAMPLER = structured_pairs(1, radius=10.0, n_random=1000, ell0=1.0, seed=3)


# ---- E3


def test_linear_contraction_passes_e3():
    for ell in (0.5, 1.0, 3.0):
        r = verify_dissipativity_at_infinity(holder_model(ell0=ell), SAMPLER)
        assert r.passed


def test_anti_dissipative_e3_violation_is_12():
    m = holder_model(b1=lambda x: x, lambda2=1.0, ell0=1.0)
    r = verify_dissipativity_at_infinity(m, pair([2.0], [0.0]))
    assert not r.passed
    assert r.worst_violation == pytest.approx(12.0)


def test_double_well_fails_only_at_the_clamp_kink():
    m = get_builtin("double_well")
    s = default_sampler(m, seed=1)
    r = verify_dissipativity_at_infinity(m, s)
    assert not r.passed
    x, y = (float(v[0]) for v in r.witness)
    assert min(x, y) < 2.0 < max(x, y) or min(x, y) < -2.0 < max(x, y)
    straddle = ((s.x[:, 0] - 2) * (s.y[:, 0] - 2) < 0) | ((s.x[:, 0] + 2) * (s.y[:, 0] + 2) < 0)
    assert verify_dissipativity_at_infinity(m, s.filter(~straddle)).passed


def test_empty_sampler_is_input_error():
    with pytest.raises(InputError):
        verify_dissipativity_at_infinity(holder_model(), PairSampler(np.zeros((0, 1)),
                                                                     np.zeros((0, 1))))


# ---- E0


def test_zero_holder_part_passes_with_zero_violation():
    r = verify_holder(holder_model(), SAMPLER)
    assert r.passed and r.worst_violation == 0.0


def test_sqrt_drift_holder_half():
    b0 = lambda x: np.sign(x) * np.sqrt(np.abs(x))
    assert verify_holder(holder_model(b0=b0, K1=2.0), SAMPLER).passed
    # brute-force supremum of the Holder quotient over a fine grid
    g = np.linspace(-3, 3, 1201)
    X, Y = np.meshgrid(g, g)
    d = np.abs(X - Y)
    q = np.abs(np.sign(X) * np.sqrt(np.abs(X)) - np.sign(Y) * np.sqrt(np.abs(Y)))
    sup = np.max(q[d > 0] / np.sqrt(d[d > 0]))
    assert sup <= math.sqrt(2) + 1e-12


def test_linear_holder_fails():
    m = holder_model(b0=lambda x: x, K1=1.0)
    r = verify_holder(m, pair([4.0], [0.0]))
    assert not r.passed and r.worst_violation == pytest.approx(2.0)


def test_alpha_out_of_range_is_config_error():
    with pytest.raises(ConfigError):
        verify_holder(holder_model(alpha=1.0), SAMPLER)


# ---- E*/E4


def test_identity_sigma_ellipticity():
    assert verify_ellipticity_lipschitz(holder_model(), SAMPLER).passed


def test_bounded_sigma_kappa4():
    sig = lambda x: (0.5 * (1 + 1 / (1 + x ** 2)))[:, :, None]
    assert verify_ellipticity_lipschitz(holder_model(sigma=sig, kappa=4.0, K2=1.0), SAMPLER).passed
    g = np.linspace(-20, 20, 400001)
    dsig = np.abs(np.gradient(0.5 * (1 + 1 / (1 + g * g)), g))
    assert dsig.max() <= 3 * math.sqrt(3) / 16 + 1e-8


def test_degenerate_sigma_fails_at_zero():
    sig = lambda x: x[:, :, None]
    r = verify_ellipticity_lipschitz(holder_model(sigma=sig, kappa=10.0, K2=1.0),
                                     PairSampler.from_points(np.array([0.0, 0.5, 1.0])))
    assert not r.passed
    assert float(r.witness[0][0]) == 0.0


@pytest.mark.parametrize("c", [0.5, 1.0, 2.0, 3.0])
def test_scaled_identity_zero_violation_at_exact_kappa(c):
    m = holder_model(sigma=const_sigma(c, 2), kappa=max(c * c, c ** -2), dim=2)
    s = structured_pairs(2, n_random=200, seed=1)
    r = verify_ellipticity_lipschitz(m, s, Tolerance(0.0, 0.0))
    assert r.worst_violation == 0.0


# ---- E*7/E*6


def mono(b1, lam=1.0, ls=1.0, C=0.0):
    return MonotoneLyapunovModel(zero, b1, const_sigma(1.0), alpha=0.5, K1=1.0, K2=1.0, kappa=1.0,
                                 lam=lam, lambda_star=ls, C_lambda_star=C)


def test_bounded_lipschitz_perturbation_passes():
    m = get_builtin("sine_perturbed")
    assert verify_monotone_lyapunov(m, default_sampler(m)).passed


def test_cubic_drift_passes_with_quarter():
    m = mono(lambda x: -x ** 3, lam=0.1, ls=1.0, C=0.25)
    s = structured_pairs(1, radius=5.0, n_random=1000, seed=2)
    assert verify_monotone_lyapunov(m, s).passed
    g = np.linspace(-5, 5, 100001)
    assert np.max(-g ** 4 + g ** 2) <= 0.25 + 1e-12


def test_anti_dissipative_lyapunov_fails():
    r = verify_monotone_lyapunov(mono(lambda x: x), SAMPLER)
    assert not r.passed
    sub = {d["check"]: d["passed"] for d in r.details["subReports"]}
    assert sub["E*6"] is False


# ---- piecewise


def test_piecewise_example_dissipative_passes():
    m = get_builtin("piecewise_example")
    r = verify_piecewise_assumptions(m, default_sampler(m, radius=50.0))
    assert r.passed
    assert r.details["phiEmpirical"]


def test_piecewise_example_literal_fails_lyapunov_on_the_left():
    m = get_builtin("piecewise_example", variant="literal")
    r = verify_piecewise_assumptions(m, default_sampler(m, radius=10.0))
    assert not r.passed and r.check == "W*"
    assert float(r.witness[0][0]) < 0


def test_piecewise_no_jumps_passes():
    m = PiecewiseModel(lambda x: -x, (), lambda x: np.ones_like(x), lambda_piece=0.0,
                       eps_star=0.25, lambda_sharp=0.5, C_star=1.0, K2=1.0, kappa=1.0,
                       phi_local=lambda n: 1.0)
    assert verify_piecewise_assumptions(m, default_sampler(m)).passed


def test_piecewise_anti_dissipative_fails_at_ten():
    b = lambda x: x + (x > 0)
    m = PiecewiseModel(b, (0.0,), lambda x: np.ones_like(x), lambda_piece=1.0, eps_star=0.25,
                       lambda_sharp=0.5, C_star=1.0, K2=1.0, kappa=1.0, phi_local=lambda n: 1.0)
    lhs, rhs = CHECKS["W*"](m, np.array([[10.0]]), None)
    assert lhs[0] > rhs[0]
    r = verify_piecewise_assumptions(m, default_sampler(m))
    assert not r.passed


def test_side_limits_richardson():
    b = get_builtin("piecewise_example").b
    lo, hi = side_limits(b, 1.0)
    assert lo == pytest.approx(0.0, abs=1e-9) and hi == pytest.approx(-3.0, abs=1e-9)
    lo, hi = side_limits(lambda x: np.where(x < 0, np.exp(x), 2 + np.sin(x)), 0.0)
    assert lo == pytest.approx(1.0, abs=1e-8) and hi == pytest.approx(2.0, abs=1e-8)


def test_wrong_declared_side_limits_fail():
    m0 = get_builtin("piecewise_example")
    m = PiecewiseModel(m0.b, m0.xi, m0.sigma, 2.0, 0.25, 0.5, 1.5, 0.11, 4.0,
                       side_limits=((3.0, 0.0), (0.0, -2.0)), phi_local=m0.phi_local)
    r = verify_piecewise_assumptions(m, default_sampler(m))
    assert not r.passed and r.check == "sideLimits"


def test_straddling_pair_in_per_piece_check_is_logic_error():
    m = get_builtin("piecewise_example")
    with pytest.raises(IntervalStraddleError):
        CHECKS["A_b-onesided"](m, np.array([[0.5]]), np.array([[1.5]]))


# ---- report properties


def test_witness_replays_to_worst_violation():
    m = holder_model(b1=lambda x: x, lambda2=1.0)
    r = verify_dissipativity_at_infinity(m, SAMPLER)
    assert replay_witness(m, r) == pytest.approx(r.worst_violation, rel=1e-12)
    m = get_builtin("piecewise_example", variant="literal")
    r = verify_piecewise_assumptions(m, default_sampler(m))
    assert replay_witness(m, r) == pytest.approx(r.worst_violation, rel=1e-12)


def test_verifiers_deterministic_given_seed():
    m = get_builtin("double_well")
    a = [r.to_dict() for r in verify_model(m, default_sampler(m, seed=5))]
    b = [r.to_dict() for r in verify_model(m, default_sampler(m, seed=5))]
    assert a == b


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 20.0), st.floats(0.0, 20.0))
def test_monotone_in_tolerance(t1, t2):
    lo, hi = sorted((t1, t2))
    m = holder_model(b1=lambda x: x, lambda2=1.0)
    s = pair([[2.0], [1.0]], [[0.0], [0.5]])
    if verify_dissipativity_at_infinity(m, s, lo).passed:
        assert verify_dissipativity_at_infinity(m, s, hi).passed


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 5.0), st.lists(st.floats(-50, 50), min_size=2, max_size=20))
def test_linear_contraction_property(c, xs):
    xs = np.array(xs)[:, None]
    m = holder_model(b1=lambda x: -c * x, lambda1=0.1, lambda2=2 * c, ell0=1.0)
    s = PairSampler(xs, xs[::-1].copy())
    assert verify_dissipativity_at_infinity(m, s).passed


def test_builtins_catalog():
    names = {b["name"] for b in list_builtins()}
    assert {"double_well", "piecewise_example", "ou"} <= names
    with pytest.raises(ConfigError):
        get_builtin("nope")
    with pytest.raises(ConfigError):
        get_builtin("double_well", regime="piecewise")


def test_builtin_verification_summary():
    for name, reg in [("ou", None), ("ou", "monotone_lyapunov"), ("sine_perturbed", None)]:
        m = get_builtin(name, reg)
        assert all(r.passed for r in verify_model(m)), name
