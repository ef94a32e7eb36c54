import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import pytest

from sdelimits.errors import EvaluationError, InputError
from sdelimits.integrate import (
    TimeGrid,
    ensemble_from_binary,
    ensemble_to_binary,
    ensemble_to_csv,
    estimate_moments,
    estimate_running_sup,
    jackknife_mean_se,
    simulate,
)
from sdelimits.model import get_builtin


@dataclass(frozen=True)
class Plain:
    b: Callable
    s: Callable
    dim: int = 1

    def drift(self, x):
        return self.b(x)

    def diffusion(self, x):
        return self.s(x)


FROZEN = Plain(lambda x: np.zeros_like(x), lambda x: np.zeros((x.shape[0], 1, 1)))
OU = get_builtin("ou")


def test_time_grid():
    g = TimeGrid.from_horizon(10.0, 1e-3)
    assert g.n_steps == 10000 and g.horizon == pytest.approx(10.0)
    assert g.step_of(2.5) == 2500
    with pytest.raises(InputError):
        g.step_of(2.5004)
    with pytest.raises(InputError):
        TimeGrid(0.0, 0.0, 10)
    with pytest.raises(InputError):
        TimeGrid(0.0, 0.1, 0)


def test_frozen_dynamics_stay_put():
    e = simulate(FROZEN, 3.0, TimeGrid.from_horizon(1.0, 0.01), 5, seed=1)
    assert np.all(e.states == 3.0)
    m = estimate_moments(e, 2, [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(m.values, 9.0)
    np.testing.assert_array_equal(m.se, 0.0)
    assert estimate_running_sup(e, 2, 0.0, 1.0) == 9.0


@pytest.fixture(scope="module")
def ou_ensemble():
    return simulate(OU, 0.0, TimeGrid.from_horizon(10.0, 1e-3), 10000, seed=11, record_every=1000)


def test_ou_stationary_variance(ou_ensemble):
    x = ou_ensemble.at(10.0)[:, 0]
    v = x.var(ddof=1)
    # SE of the sample variance of a Gaussian is v*sqrt(2/(n-1))
    assert abs(v - 1.0) <= 3 * v * math.sqrt(2 / (x.size - 1))


def test_ou_moments(ou_ensemble):
    m2 = estimate_moments(ou_ensemble, 2, [10.0])
    m4 = estimate_moments(ou_ensemble, 4, [10.0])
    assert abs(m2.values[0] - 1.0) <= 3 * m2.se[0]
    assert abs(m4.values[0] - 3.0) <= 3 * m4.se[0]
    assert m2.sup_estimate == m2.values.max()
    with pytest.raises(InputError):
        estimate_moments(ou_ensemble, 0.5, [10.0])


def test_piecewise_paths_stay_finite():
    m = get_builtin("piecewise_example")
    e = simulate(m, 0.0, TimeGrid.from_horizon(10.0, 1e-3), 200, seed=2, record_every=100)
    assert not e.diverged.any() and np.all(np.isfinite(e.states))


def test_determinism_and_stream_independence():
    g = TimeGrid.from_horizon(1.0, 1e-2)
    a = simulate(OU, 1.0, g, 8, seed=3)
    b = simulate(OU, 1.0, g, 8, seed=3)
    np.testing.assert_array_equal(a.states, b.states)
    c = simulate(OU, 1.0, g, 8, seed=3, stream_indices=np.arange(8)[::-1])
    np.testing.assert_array_equal(a.states[::-1], c.states)
    assert not np.array_equal(a.states[0], a.states[1])
    t = simulate(OU, 1.0, g, 8, seed=3, threads=2)
    np.testing.assert_array_equal(a.states, t.states)


def test_initial_condition_recorded():
    x0 = np.linspace(-1, 1, 6)
    e = simulate(OU, x0, TimeGrid.from_horizon(0.1, 1e-2), 6, seed=0)
    np.testing.assert_array_equal(e.states[:, 0, 0], x0)
    e = simulate(OU, lambda n: np.full((n, 1), 4.0), TimeGrid.from_horizon(0.1, 1e-2), 3, seed=0)
    assert np.all(e.states[:, 0] == 4.0)


def test_weak_error_ou_mean():
    """|mean X_T - x0 e^-T| <= 3 SE + C dt with C bounded across dt."""
    cs = []
    for dt in (1e-2, 1e-3):
        e = simulate(OU, 2.0, TimeGrid.from_horizon(1.0, dt), 4000, seed=4,
                     record_every=int(round(1 / dt)))
        x = e.at(1.0)[:, 0]
        err = abs(x.mean() - 2 * math.exp(-1.0))
        se = x.std(ddof=1) / math.sqrt(x.size)
        cs.append(max(err - 3 * se, 0.0) / dt)
    assert max(cs) < 2.0


def test_running_sup_dominates_and_is_dt_stable():
    vals = []
    for dt in (2e-3, 1e-3):
        e = simulate(OU, lambda n: np.random.default_rng(9).standard_normal((n, 1)),
                     TimeGrid.from_horizon(1.0, dt), 4000, seed=5, record_every=1)
        sup, se = estimate_running_sup(e, 2, 0.0, 1.0, with_se=True)
        single = estimate_moments(e, 2, [0.0]).values[0]
        assert math.isfinite(sup) and sup >= single
        vals.append((sup, se))
    (a, sa), (b, sb) = vals
    assert abs(a - b) <= 2 * math.hypot(sa, sb)
    with pytest.raises(InputError):
        estimate_running_sup(e, 2, 0.5, 2.0)


def test_moments_not_trending_up():
    e = simulate(OU, 3.0, TimeGrid.from_horizon(50.0, 1e-2), 500, seed=6, record_every=100)
    t = np.arange(0, 51, 1.0)
    m = estimate_moments(e, 2, t)
    slope = np.polyfit(t, m.values, 1)[0]
    assert slope <= 0
    pw = get_builtin("piecewise_example")
    e = simulate(pw, 3.0, TimeGrid.from_horizon(50.0, 1e-2), 500, seed=6, record_every=100)
    m = estimate_moments(e, 2, t)
    assert np.polyfit(t, m.values, 1)[0] <= 0


def test_diverged_paths_flagged_not_clamped():
    boom = Plain(lambda x: x ** 3, lambda x: np.ones((x.shape[0], 1, 1)))
    x0 = np.array([0.0, 50.0])
    e = simulate(boom, x0, TimeGrid.from_horizon(1.0, 0.1), 2, seed=1)
    assert e.diverged.tolist() == [False, True]
    assert np.isnan(e.states[1, -1, 0])
    m = estimate_moments(e, 2, [0.0])
    assert m.n_excluded == 1 and m.values[0] == 0.0
    all_bad = simulate(boom, 50.0, TimeGrid.from_horizon(1.0, 0.1), 2, seed=1)
    with pytest.raises(EvaluationError):
        estimate_moments(all_bad, 2, [0.0])


def test_observable_integrals_left_and_trapezoid():
    g = TimeGrid.from_horizon(1.0, 0.01)
    lin = Plain(lambda x: np.ones_like(x), lambda x: np.zeros((x.shape[0], 1, 1)))
    obs = {"id": lambda x: x[:, 0]}
    left = simulate(lin, 0.0, g, 1, seed=0, observables=obs)
    trap = simulate(lin, 0.0, g, 1, seed=0, observables=obs, quadrature="trapezoid")
    # X_t = t: left sum sum_k k dt^2, trapezoid exact 1/2
    assert left.integrals["id"][0, -1] == pytest.approx(0.5 - 0.005, abs=1e-12)
    assert trap.integrals["id"][0, -1] == pytest.approx(0.5, abs=1e-12)


def test_ensemble_read_only_and_errors():
    e = simulate(OU, 0.0, TimeGrid.from_horizon(0.1, 0.01), 2, seed=0)
    with pytest.raises(ValueError):
        e.states[0, 0, 0] = 1.0
    with pytest.raises(InputError):
        simulate(OU, 0.0, TimeGrid.from_horizon(0.1, 0.01), 0, seed=0)
    with pytest.raises(InputError):
        simulate(OU, 0.0, TimeGrid.from_horizon(0.1, 0.01), 2, seed=0, record_every=3)


def test_serialization_round_trip(tmp_path):
    e = simulate(OU, 0.5, TimeGrid.from_horizon(0.2, 0.01), 3, seed=8, record_every=2)
    ensemble_to_binary(e, tmp_path / "p.bin")
    r = ensemble_from_binary(tmp_path / "p.bin")
    np.testing.assert_array_equal(r.states, e.states)
    assert r.grid == e.grid and r.root_seed == e.root_seed
    ensemble_to_csv(e, tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0].startswith("# dim=1") and lines[1] == "path,stepIndex,t,x_1"
    rows = np.loadtxt(tmp_path / "p.csv", delimiter=",", skiprows=2)
    assert rows.shape == (3 * 11, 4)
    np.testing.assert_array_equal(rows[:, 3], e.states.reshape(-1))


def test_jackknife_matches_classical_se_for_mean():
    v = np.random.default_rng(0).standard_normal(500)
    m, se = jackknife_mean_se(v)
    assert m == pytest.approx(v.mean())
    assert se == pytest.approx(v.std(ddof=1) / math.sqrt(500), rel=1e-10)
