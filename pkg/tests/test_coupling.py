import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import pytest

from sdelimits.coupling import (
    build_diffusion_split,
    default_glue_threshold,
    estimate_contraction,
    quasi_cost,
    reflection_matrix,
    simulate_coupled,
)
from sdelimits.errors import DomainError, EllipticityError, InputError
from sdelimits.integrate import TimeGrid, simulate
from sdelimits.model import get_builtin


@dataclass(frozen=True)
class Plain:
    b: Callable
    s: Callable
    kappa: float
    dim: int = 1

    def drift(self, x):
        return self.b(x)

    def diffusion(self, x):
        return self.s(x)


def const(c, d=1):
    return lambda x: np.broadcast_to(c * np.eye(d), (x.shape[0], d, d))


OU = get_builtin("ou")


def test_split_identity():
    m = Plain(lambda x: -x, const(1.0, 3), 1.0, 3)
    st = build_diffusion_split(m).sigma_tilde(np.zeros((2, 3)))
    np.testing.assert_allclose(st[0], np.eye(3) / math.sqrt(2), atol=1e-15)


def test_split_bounded_sigma():
    m = get_builtin("piecewise_example")
    st = build_diffusion_split(m, 4.0).sigma_tilde(np.zeros((1, 1)))
    assert st[0, 0, 0] ** 2 == pytest.approx(7 / 8, abs=1e-14)


def test_split_degenerate_raises_with_point():
    m = Plain(lambda x: x, lambda x: x[:, :, None], 1.0)
    with pytest.raises(EllipticityError) as ei:
        build_diffusion_split(m).sigma_tilde(np.array([[1.0], [0.0]]))
    assert float(np.ravel(ei.value.point)[0]) == 0.0


def test_split_residual_random_points():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((3, 3))

    def sig(x):
        # x-dependent, uniformly elliptic 3x3 diffusion
        base = np.eye(3) * 1.5 + 0.3 * np.tanh(x)[:, :, None] * A[None]
        return base
    m = Plain(lambda x: -x, sig, 8.0, 3)
    x = rng.uniform(-5, 5, (1000, 3))
    st = build_diffusion_split(m).sigma_tilde(x)
    s = sig(x)
    res = st @ st + np.eye(3) / 16 - s @ np.swapaxes(s, 1, 2)
    assert np.max(np.sqrt(np.sum(res ** 2, axis=(1, 2)))) <= 1e-10
    np.testing.assert_allclose(st, np.swapaxes(st, 1, 2), atol=1e-14)
    assert np.all(np.linalg.eigvalsh(st) >= -1e-12)


def test_reflection_examples_and_properties():
    np.testing.assert_array_equal(reflection_matrix([1.0, 0.0]), [[-1, 0], [0, 1]])
    P = reflection_matrix(np.array([1.0, 1.0]) / math.sqrt(2))
    np.testing.assert_allclose(P @ [1.0, -1.0], [1.0, -1.0], atol=1e-15)
    rng = np.random.default_rng(1)
    for _ in range(1000):
        z = rng.standard_normal(rng.integers(1, 5))
        P = reflection_matrix(z)
        n = z / np.linalg.norm(z)
        I = np.eye(z.size)
        assert np.max(np.abs(P @ P.T - I)) <= 1e-12
        assert np.max(np.abs(P - P.T)) <= 1e-12
        assert np.max(np.abs(P @ P - I)) <= 1e-12
        assert np.max(np.abs(P @ n + n)) <= 1e-12
    with pytest.raises(DomainError):
        reflection_matrix([0.0, 0.0])


def test_equal_start_glued_at_zero():
    g = TimeGrid.from_horizon(1.0, 1e-2)
    e = simulate_coupled(OU, build_diffusion_split(OU), 1.0, 1.0, g, 20, seed=1)
    assert np.all(e.coupling_step == 0)
    np.testing.assert_array_equal(e.y, e.y_hat)
    c = estimate_contraction(e)
    assert np.all(c.mean_distance == 0) and c.fully_coupled and c.fitted_rate is None


def test_ou_reflection_couples():
    g = TimeGrid.from_horizon(20.0, 1e-3)
    e = simulate_coupled(OU, build_diffusion_split(OU, 2.0), 2.0, -2.0, g, 1000, seed=2,
                         record_every=200)
    assert e.glued_fraction() >= 0.99
    c = estimate_contraction(e)
    assert c.fitted_rate is not None and c.fitted_rate > 0
    assert np.all(c.mean_distance >= 0)
    # identical after the glue step, strictly apart before it
    for i in range(20):
        p = e.pair(i)
        if p.coupling_step_index is not None:
            after = p.record_steps >= p.coupling_step_index
            np.testing.assert_array_equal(p.y_path[after], p.y_hat_path[after])
            assert np.all(np.abs(p.y_path[~after] - p.y_hat_path[~after]) > 0)


def test_frozen_glue_time_scales_quadratically():
    kappa = 1.0
    m = Plain(lambda x: np.zeros_like(x), const(1 / math.sqrt(2 * kappa)), kappa)
    split = build_diffusion_split(m)
    assert np.all(split.sigma_tilde(np.zeros((3, 1))) == 0.0)
    g = TimeGrid.from_horizon(60.0, 1e-2)
    meds = []
    for z0 in (1.0, 2.0, 4.0):
        e = simulate_coupled(m, split, z0 / 2, -z0 / 2, g, 2000, seed=3, record_every=6000)
        t = np.where(e.coupling_step >= 0, e.coupling_step * g.dt, np.inf)
        # the mean hitting time is infinite; the median scales like |Z0|^2
        meds.append(np.median(t))
    slope = np.polyfit(np.log([1, 2, 4]), np.log(meds), 1)[0]
    assert 1.7 <= slope <= 2.3


def test_quasi_cost_direct_and_contraction_t0():
    assert quasi_cost(np.array([[1.0]]), np.array([[0.0]]), 2, 1)[0] == 2.0
    g = TimeGrid.from_horizon(1.0, 1e-2)
    e = simulate_coupled(OU, build_diffusion_split(OU), 1.0, 0.0, g, 10, seed=4, record_every=10)
    c = estimate_contraction(e, ("quasi", 2, 1), [0.0, 1.0])
    assert c.mean_distance[0] == 2.0
    with pytest.raises(InputError):
        estimate_contraction(e, ("quasi", 1, 1))
    with pytest.raises(InputError):
        estimate_contraction(e, "W1", [0.0])


def test_marginal_law_matches_plain_simulation():
    g = TimeGrid.from_horizon(2.0, 1e-2)
    e = simulate_coupled(OU, build_diffusion_split(OU), 2.0, -2.0, g, 4000, seed=5,
                         record_every=200)
    p = simulate(OU, 2.0, g, 4000, seed=6, record_every=200)
    a, b = e.y[:, -1, 0], p.states[:, -1, 0]
    for k in (1, 2):
        se = math.hypot((a ** k).std() / math.sqrt(a.size), (b ** k).std() / math.sqrt(b.size))
        assert abs((a ** k).mean() - (b ** k).mean()) <= 3 * se


@pytest.mark.parametrize("crossing", [True, False])
def test_lower_threshold_never_glues_earlier(crossing):
    g = TimeGrid.from_horizon(5.0, 1e-3)
    sp = build_diffusion_split(OU)
    hi = simulate_coupled(OU, sp, 1.0, -1.0, g, 200, seed=7, glue_threshold=1e-2,
                          crossing=crossing, record_every=5000)
    lo = simulate_coupled(OU, sp, 1.0, -1.0, g, 200, seed=7, glue_threshold=1e-4,
                          crossing=crossing, record_every=5000)
    big = np.iinfo(np.int64).max
    th = np.where(hi.coupling_step < 0, big, hi.coupling_step)
    tl = np.where(lo.coupling_step < 0, big, lo.coupling_step)
    assert np.all(tl >= th)


def test_default_threshold_and_csv(tmp_path):
    assert default_glue_threshold(2.0, -2.0) == pytest.approx(5e-4)
    g = TimeGrid.from_horizon(0.1, 1e-2)
    e = simulate_coupled(OU, build_diffusion_split(OU), 1.0, -1.0, g, 3, seed=8)
    e.to_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "pair,stepIndex,t,y_1,yHat_1,glued"
    assert len(lines) == 1 + 3 * 11


def test_coupling_deterministic():
    g = TimeGrid.from_horizon(1.0, 1e-2)
    sp = build_diffusion_split(OU)
    a = simulate_coupled(OU, sp, 1.0, -1.0, g, 16, seed=9)
    b = simulate_coupled(OU, sp, 1.0, -1.0, g, 16, seed=9, threads=2)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.coupling_step, b.coupling_step)


def test_two_dimensional_coupling_contracts():
    m = get_builtin("ou", dim=2)
    # no sign-crossing rule in d > 1, so the threshold must exceed the step noise
    g = TimeGrid.from_horizon(6.0, 1e-3)
    e = simulate_coupled(m, build_diffusion_split(m), [1.0, 1.0], [-1.0, -1.0], g, 300, seed=10,
                         glue_threshold=2e-2, record_every=500)
    c = estimate_contraction(e)
    assert c.mean_distance[-1] < 0.1 * c.mean_distance[0]
