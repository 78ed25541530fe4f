import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seriesfacts.devices import build_catalog
from seriesfacts.market import (BTHETA, FORMULATIONS, SHIFT_FACTOR, MarketError, build_dcopf,
                                build_lower_level, expected_dcopf_size, solve_market)
from seriesfacts.network import compute_ptdf
from seriesfacts.synthetic import SyntheticConfig, random_case

from conftest import make_case, snapshot


def dcopf(case, scen, f, **kw):
    return solve_market(build_dcopf(case, scen, f, compute_ptdf(case), **kw))


@pytest.mark.parametrize("f", FORMULATIONS)
def test_two_bus_dispatch(two_bus, f):
    case = two_bus()
    out = dcopf(case, snapshot(case), f)
    assert out.objective == pytest.approx(1500.0)
    assert out.dispatch[0] == pytest.approx(150.0)


@pytest.mark.parametrize("f", FORMULATIONS)
def test_two_bus_shedding(two_bus, f):
    case = two_bus(limit=100.0)
    out = dcopf(case, snapshot(case), f, shedding=True, beta=5000.0)
    assert out.objective == pytest.approx(251_000.0)
    assert out.shedding[0] == pytest.approx(50.0)


def test_zero_load(two_bus):
    case = two_bus(load=0.0)
    out = dcopf(case, snapshot(case), SHIFT_FACTOR)
    assert out.objective == pytest.approx(0.0, abs=1e-9)
    assert out.dispatch[0] == pytest.approx(0.0, abs=1e-9)


def test_shift_factor_needs_ptdf(two_bus):
    case = two_bus()
    with pytest.raises(MarketError, match="PTDF"):
        build_dcopf(case, snapshot(case), SHIFT_FACTOR)


def test_unknown_formulation(two_bus):
    case = two_bus()
    with pytest.raises(ValueError):
        build_dcopf(case, snapshot(case), "ac")


@settings(max_examples=20, deadline=None)
@given(nb=st.integers(2, 25), seed=st.integers(0, 1000), wind=st.integers(0, 3))
def test_model_size_formulas(nb, seed, wind):
    case = random_case(seed, SyntheticConfig(n_bus=nb, n_wind=wind))
    scen = snapshot(case)
    n_g = len(case.generators) + len(case.wind_farms)
    for f in FORMULATIONS:
        got = build_dcopf(case, scen, f, compute_ptdf(case)).size()
        want = expected_dcopf_size(case.n_bus, case.n_branch, n_g, f)
        assert {k: got[k] for k in want} == want


def test_ring_vsr_delivery(ring3):
    scen = snapshot(ring3)
    base = dcopf(ring3, scen, BTHETA)
    assert base.dispatch[0] == pytest.approx(75.0, abs=1e-6)

    # grid oracle: replace x_13 by x/(1+db) and solve the plain DCOPF
    x13 = ring3.x[1]
    best = max(dcopf(ring3.with_reactance("L13", x13 / (1 + db)), scen, BTHETA).dispatch[0]
               for db in np.linspace(-1 / 6, 7 / 3, 1000))
    assert best == pytest.approx(80.0, abs=1e-6)

    cat = build_catalog(ring3, ["L13"], [])
    mm = build_lower_level(ring3, scen, cat, x={"delta_L13": 1.0})
    out = solve_market(mm)
    assert out.dispatch[0] == pytest.approx(80.0, abs=1e-6)
    assert out.implied_db["L13"] == pytest.approx(-1 / 6, abs=1e-6)


def test_lower_level_devices_off_matches_dcopf(ring3):
    scen = snapshot(ring3)
    cat = build_catalog(ring3, ["L13"], ["L12"])
    ll = solve_market(build_lower_level(ring3, scen, cat, x={}))
    plain = dcopf(ring3, scen, SHIFT_FACTOR, shedding=True)
    assert ll.objective == pytest.approx(plain.objective, rel=1e-9)


def test_spillage_behind_bottleneck():
    case = make_case(["1", "2"], [("L1", "1", "2", 0.1, 60.0)],
                     gens=[("G1", "1", 30.0, 0.0, 300.0)], loads=[("D1", "1", 150.0)],
                     farms=[("W1", "2", 100.0)])
    out = solve_market(build_lower_level(case, snapshot(case), build_catalog(case, [], []), x={}))
    assert out.spillage[0] == pytest.approx(40.0, abs=1e-6)
    assert out.wind_used[0] + out.spillage[0] == pytest.approx(100.0, abs=1e-6)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 500), load=st.floats(0.3, 2.5))
def test_outcome_invariants(seed, load):
    case = random_case(seed, SyntheticConfig(n_bus=8))
    scen = snapshot(case, load_scale=load)
    cands = [case.branches[0].id]
    cat = build_catalog(case, cands, [case.branches[1].id])
    x = {f"delta_{cands[0]}": 1.0, f"alpha_{case.branches[1].id}": 1.0}
    out = solve_market(build_lower_level(case, scen, cat, x=x))
    assert np.allclose(out.wind_used + out.spillage, scen.wind_mw, atol=1e-6)
    served = scen.load_mw.sum() - out.shedding.sum()
    assert out.dispatch.sum() + out.wind_used.sum() == pytest.approx(served, abs=1e-6)
    for k in case.branches:
        assert abs(out.effective_flows[k.id]) <= k.s_max + 1e-6
