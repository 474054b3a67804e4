import csv

import numpy as np
import pytest

from skelpore import biology as bio, poregraph as pg, simulate as sm
from skelpore.errors import ScenarioError

import oracles

ZERO = dict(mu_max=0.0, rho=0.0, mort=0.0, k_pom=0.0, k_som=0.0)


def state(dom, som=0.0, pom=0.0, b=0.0):
    f = lambda x: np.atleast_1d(np.asarray(x, dtype=float)).copy()
    return bio.SimState(f(dom), f(som), f(pom), f(b))


def test_zero_rates_leave_state_unchanged():
    s0 = state([1.0, 2.0], [0.5, 0.1], [0.3, 0.0], [0.2, 0.4])
    s1 = bio.transform_step(s0, bio.BioParams(**ZERO), np.array([1.0, 1.0]), 0.24)
    for name in ("dom", "som", "pom", "bio"):
        assert np.array_equal(getattr(s1, name), getattr(s0, name))
    assert s1.co2 == 0.0 and s1.time == pytest.approx(0.24)


def test_saturated_growth():
    p = bio.BioParams(**{**ZERO, "mu_max": 9.6})
    s = bio.transform_step(state(1e6, b=1.0), p, np.array([1.0]), 0.24)
    assert s.bio[0] == pytest.approx(1.096, abs=1e-9)
    assert 1e6 - s.dom[0] == pytest.approx(0.096, abs=1e-9)


def test_mortality_split():
    p = bio.BioParams(**{**ZERO, "mort": 0.5})
    s = bio.transform_step(state(0.0, b=1.0), p, np.array([1.0]), 0.24)
    assert s.dom[0] == pytest.approx(0.00275, rel=1e-12)
    assert s.som[0] == pytest.approx(0.00225, rel=1e-12)
    assert s.bio[0] == pytest.approx(0.995, rel=1e-14)


def test_respiration_goes_to_co2():
    p = bio.BioParams(**{**ZERO, "rho": 0.2})
    s = bio.transform_step(state(0.0, b=2.0), p, np.array([1.0]), 24.0)
    assert s.co2 == pytest.approx(2.0 - s.bio[0], rel=1e-14)
    assert s.bio[0] > 0


def test_growth_clamped_by_available_dom():
    p = bio.BioParams(**{**ZERO, "mu_max": 1000.0})
    s = bio.transform_step(state(1e-3, b=50.0), p, np.array([1e9]), 24.0)
    assert s.dom.min() >= 0 and s.total_carbon() == pytest.approx(50.001, rel=1e-14)


def test_losses_clamped_when_rates_exceed_one_per_step():
    p = bio.BioParams(**{**ZERO, "rho": 200.0, "mort": 300.0})
    s = bio.transform_step(state(0.0, b=1.0), p, np.array([1.0]), 24.0)
    assert s.bio[0] >= 0 and s.total_carbon() == pytest.approx(1.0, rel=1e-14)


def test_params_validation():
    with pytest.raises(ValueError):
        bio.BioParams(rho=-1.0)
    with pytest.raises(ValueError):
        bio.BioParams(p_return=1.2)


def test_defaults():
    p = bio.BioParams()
    assert (p.mu_max, p.K, p.rho, p.mort, p.p_return, p.k_pom, p.k_som) == (9.6, 0.001, 0.2, 0.5, 0.55, 0.3, 0.001)


# --- against an independent ODE integration ------------------------------------


def pools_rhs(p, carrier):
    """Pool ODE in days, written out term by term: y = (dom, som, pom, bio, co2)."""

    def rhs(y):
        dom, som, pom, b, _ = y
        conc = dom * p.mass_unit_g / carrier
        growth = p.mu_max * conc / (p.K + conc) * b
        death = p.mort * b
        return np.array([
            -growth + p.p_return * death + p.k_pom * pom + p.k_som * som,
            (1 - p.p_return) * death - p.k_som * som,
            -p.k_pom * pom,
            growth - p.rho * b - death,
            p.rho * b,
        ])

    return rhs


def run_local(p, s, volume, dt, n):
    for _ in range(n):
        s = bio.transform_step(s, p, volume, dt)
    return np.array([s.dom[0], s.som[0], s.pom[0], s.bio[0], s.co2])


def test_local_dynamics_converge_to_ode():
    p = bio.BioParams()
    volume = np.array([1e6])  # 1e-6 g of water
    y0 = np.array([0.5, 0.2, 0.3, 0.02, 0.0])
    ref = oracles.rk_reference(pools_rhs(p, volume[0] * p.carrier_g_per_um3), y0, 1.0, 20000)
    errs = []
    for dt in (0.24, 0.12, 0.06, 0.03):
        got = run_local(p, state(y0[0], y0[1], y0[2], y0[3]), volume, dt, int(round(24 / dt)))
        errs.append(np.max(np.abs(got - ref)) / y0.sum())
    errs = np.array(errs)
    assert np.all(np.log2(errs[:-1] / errs[1:]) > 0.8)
    assert errs[-1] < 0.01


def test_saturated_regime_matches_fine_reference():
    # DOM far above K: growth is exponential, so the forward update needs small steps.
    p = bio.BioParams()
    volume = np.array([1e6])
    y0 = np.array([1000.0, 0.0, 0.0, 0.01, 0.0])
    ref = oracles.rk_reference(pools_rhs(p, volume[0] * p.carrier_g_per_um3), y0, 1.0, 20000)
    got = run_local(p, state(y0[0], b=y0[3]), volume, 0.0024, 10000)
    assert np.allclose(got, ref, rtol=0.01, atol=0)


# --- run loop ----------------------------------------------------------------------


def small_network(n=40, seed=0):
    rng = np.random.default_rng(seed)
    d = oracles.random_network(rng, n)
    d["volume"] = d["volume"] * 1e4
    return pg.PoreNetwork(**d)


def test_zero_biomass_keeps_dom_flat():
    net = small_network()
    rng = np.random.default_rng(1)
    s0 = bio.SimState(rng.uniform(0, 1, net.n_nodes), np.zeros(net.n_nodes), np.zeros(net.n_nodes),
                      np.zeros(net.n_nodes))
    series, final = bio.run_decomposition(net, s0, bio.BioParams(), sm.DiffusionParams(1e3, 0.24), 24.0)
    assert np.allclose(series.percent["dom"], 100.0, rtol=0, atol=1e-10)
    assert np.all(series.percent["co2"] == 0)
    assert not np.allclose(final.dom, s0.dom)


def test_no_mortality_solid_pools_decrease():
    net = small_network()
    rng = np.random.default_rng(2)
    n = net.n_nodes
    s0 = bio.SimState(rng.uniform(0, 0.1, n), rng.uniform(0, 1, n), rng.uniform(0, 1, n),
                      bio.place_random_spots(n, 5, 0.01, 0))
    series, _ = bio.run_decomposition(net, s0, bio.BioParams(mort=0.0), sm.DiffusionParams(1e3, 0.24), 48.0)
    solid = series.percent["som"] + series.percent["pom"]
    assert np.all(np.diff(solid) <= 1e-12)


def test_run_balances_and_records():
    net = small_network()
    n = net.n_nodes
    s0 = bio.SimState(bio.place_uniform(net.volume, 1.0), np.zeros(n), bio.place_largest(net.volume, 3, 0.5),
                      bio.place_random_spots(n, 10, 0.05, 3))
    series, final = bio.run_decomposition(net, s0, bio.BioParams(), sm.DiffusionParams(1e3, 0.24), 24.0,
                                          output_interval=2.4)
    assert series.time_h.tolist() == pytest.approx([2.4 * k for k in range(11)])
    assert series.carbon_drift.max() <= 1e-12
    assert np.all(np.diff(series.percent["co2"]) >= 0)
    for p in bio.POOLS:
        assert series.percent[p].min() >= 0
    total = sum(series.percent[p] for p in bio.POOLS)
    assert np.allclose(total, 100.0, atol=1e-9)
    assert final.time == pytest.approx(24.0)


def test_time_series_csv(tmp_path):
    net = small_network(10)
    n = net.n_nodes
    s0 = bio.SimState(np.ones(n), np.zeros(n), np.zeros(n), np.full(n, 0.01))
    series, _ = bio.run_decomposition(net, s0, bio.BioParams(), sm.DiffusionParams(1e3, 0.24), 0.48)
    series.write_csv(tmp_path / "t.csv")
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["time_h", "co2_pct", "biomass_pct", "dom_pct", "som_pct", "pom_pct"]
    assert len(rows) == 4 and float(rows[1][0]) == 0.0


# --- placement -----------------------------------------------------------------------


def test_place_uniform():
    assert bio.place_uniform(np.array([1.0, 3.0]), 2.0).tolist() == [0.5, 1.5]


def test_place_random_spots():
    a = bio.place_random_spots(100, 10, 1.0, seed=4)
    assert np.count_nonzero(a) == 10 and a.sum() == pytest.approx(1.0)
    assert np.array_equal(a, bio.place_random_spots(100, 10, 1.0, seed=4))
    with pytest.raises(ScenarioError):
        bio.place_random_spots(5, 6, 1.0, 0)


def test_place_largest_breaks_ties_by_id():
    a = bio.place_largest(np.array([2.0, 5.0, 5.0, 1.0]), 2, 1.0)
    assert a.tolist() == [0.0, 0.5, 0.5, 0.0]
    assert bio.place_largest(np.array([3.0, 3.0, 3.0]), 1, 1.0).tolist() == [1.0, 0.0, 0.0]


def test_place_regions():
    assert bio.place_regions(4, [1, 4], 2.0).tolist() == [1.0, 0.0, 0.0, 1.0]
    with pytest.raises(ScenarioError):
        bio.place_regions(4, [0], 1.0)
    with pytest.raises(ScenarioError):
        bio.place_regions(4, [5], 1.0)
