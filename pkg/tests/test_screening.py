import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seriesfacts.screening import (FREE, NEGATIVE, POSITIVE, ScreeningConfig, direction_verdicts,
                                   fix_flow_directions, lower_level_binaries,
                                   reactance_sensitivity, screen, select_monitored_lines,
                                   weighted_rank, weighted_sensitivity)

from conftest import make_case, snapshot


def test_binding_ring_line_has_negative_sensitivity(ring3):
    sens = reactance_sensitivity(ring3, snapshot(ring3))
    assert sens["L13"].eta < 0
    assert sens["L13"].consistent
    assert sens["L12"].eta > 0 and sens["L23"].eta > 0


def test_radial_network_is_insensitive(two_bus):
    case = two_bus()
    sens = reactance_sensitivity(case, snapshot(case))
    assert sens["L1"].eta == pytest.approx(0.0, abs=1e-6)


def test_weighted_sensitivity_example():
    case = make_case(["1", "2"], [("L1", "1", "2", 0.1, 100.0)])
    assert weighted_sensitivity({"L1": [-3.0]}, [100], case) == {"L1": pytest.approx(30.0)}


def test_zero_sensitivity_ranks_by_id():
    ranked = weighted_rank({"L10": 0.0, "L2": 0.0, "L1": 0.0})
    assert [k for k, _ in ranked] == ["L1", "L2", "L10"]


@settings(max_examples=50)
@given(vals=st.dictionaries(st.sampled_from([f"L{i}" for i in range(1, 15)]),
                            st.floats(0, 1e6), min_size=1))
def test_ranking_invariant_under_doubling(vals):
    a = [k for k, _ in weighted_rank(vals, None)]
    b = [k for k, _ in weighted_rank({k: 2 * v for k, v in vals.items()}, None)]
    assert a == b


def test_doubling_hours_doubles_weighted_sensitivity():
    case = make_case(["1", "2", "3"], [("A", "1", "2", 0.1, 1.0), ("B", "2", "3", 0.2, 1.0)])
    eta = {"A": [1.0, -2.0], "B": [0.5, 0.5]}
    one = weighted_sensitivity(eta, [10, 20], case)
    two = weighted_sensitivity(eta, [20, 40], case)
    assert all(two[k] == pytest.approx(2 * one[k]) for k in one)


def test_direction_verdicts():
    case = make_case(["1", "2", "3"], [("A", "1", "2", 0.1, 100.0), ("B", "2", "3", 0.1, 100.0),
                                       ("C", "1", "3", 0.1, 100.0)])
    flows = np.array([[10.0, 20.0, 5.0],
                      [-3.0, -1.0, -0.2],
                      [4.0, -4.0, 9.0]])
    v = direction_verdicts(case, flows, ["A", "B", "C"], dead_band=1e-3)
    assert v == {"A": POSITIVE, "B": NEGATIVE, "C": FREE}
    # a flow inside the dead-band keeps the binary
    assert direction_verdicts(case, flows, ["B"], dead_band=0.005)["B"] == FREE


def test_binary_count_arithmetic():
    dirs = {f"L{i}": (POSITIVE if i < 8 else FREE) for i in range(10)}
    assert lower_level_binaries(dirs, 20) == (200, 40)


def test_direction_fixing_is_conservative(ring3):
    low = snapshot(ring3, sid=1, load_scale=0.2)
    high = snapshot(ring3, sid=2, load_scale=1.0)
    v = fix_flow_directions(ring3, [low, high], ["L13", "L12"])
    assert v == {"L13": POSITIVE, "L12": POSITIVE}


def test_monitoring_thresholds(ring3):
    scen = [snapshot(ring3)]
    assert set(select_monitored_lines(ring3, scen, threshold=0.0)) == {"L12", "L13", "L23"}
    # above 1.0 only candidates and binding lines survive; L13 binds at 50 MW
    assert select_monitored_lines(ring3, scen, threshold=1.0 + 1e-9) == ("L13",)
    assert set(select_monitored_lines(ring3, scen, threshold=1.0 + 1e-9,
                                      candidates=["L23"])) == {"L13", "L23"}


def test_screen_report(ring3):
    scen = [snapshot(ring3, sid=1), snapshot(ring3, sid=2, hours=3, load_scale=0.5)]
    rep = screen(ring3, scen, ScreeningConfig(top_n_vsr=1, top_n_pst=2, threshold=0.6))
    assert rep.vsr_candidates == [rep.ranking[0][0]]
    assert rep.pst_candidates == [k for k, _ in rep.ranking[:2]]
    assert set(rep.directions) == set(rep.vsr_candidates)
    assert "# weighted reactance sensitivity" in rep.to_text()


def test_screen_without_reductions(ring3):
    scen = [snapshot(ring3)]
    cfg = ScreeningConfig(fix_directions=False, monitor=False)
    rep = screen(ring3, scen, cfg, pinned_vsr=["L13"], pinned_pst=[])
    assert rep.directions == {"L13": FREE}
    assert rep.monitored == ("L12", "L13", "L23")


def test_config_validation():
    with pytest.raises(ValueError):
        ScreeningConfig(rel_step=0.0)
    with pytest.raises(ValueError):
        ScreeningConfig(threshold=-0.1)
