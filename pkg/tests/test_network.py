import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seriesfacts.network import (CaseError, CaseParseError, CaseValidationError, btheta_flows,
                                 bus_angles, compute_ptdf, import_matpower, parse_case)
from seriesfacts.synthetic import SyntheticConfig, balanced_injections, random_case

from conftest import make_case


def test_two_bus_ptdf_is_unit():
    case = make_case(["1", "2"], [("L1", "1", "2", 0.1, 100.0)])
    H = compute_ptdf(case)
    assert H.H.shape == (1, 2)
    assert H.row("L1")[0] == 0.0
    assert H.row("L1")[1] == pytest.approx(-1.0)


def test_ring_splits_by_reactance(ring3):
    # injecting at bus 3 and withdrawing at the reference: 2/3 on the direct line
    H = compute_ptdf(ring3)
    assert H.row("L13")[2] == pytest.approx(-2 / 3)
    assert H.row("L12")[2] == pytest.approx(-1 / 3)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(3, 15))
def test_ptdf_matches_btheta(seed, n):
    case = random_case(seed, SyntheticConfig(n_bus=n))
    p = balanced_injections(case, np.random.default_rng(seed))
    H = compute_ptdf(case)
    assert np.allclose(H.H @ p, btheta_flows(case, p), atol=1e-8)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_reference_shift_leaves_balanced_flows_unchanged(seed):
    case = random_case(seed, SyntheticConfig(n_bus=8))
    p = balanced_injections(case, np.random.default_rng(seed))
    other = case.with_reference(case.buses[-1].id)
    assert np.allclose(compute_ptdf(case).H @ p, compute_ptdf(other).H @ p, atol=1e-8)


def test_row_projection_selects_rows():
    case = random_case(3, SyntheticConfig(n_bus=10))
    full = compute_ptdf(case)
    ids = [case.branches[i].id for i in (4, 0, 2)]
    sub = compute_ptdf(case, ids)
    assert np.allclose(sub.H, full.H[[4, 0, 2]])
    assert np.allclose(full.rows(ids).H, sub.H)


def test_angles_zero_at_reference():
    case = random_case(5)
    p = balanced_injections(case, np.random.default_rng(0))
    assert bus_angles(case, p)[case.ref_index] == 0.0


def test_unbalanced_injection_rejected(ring3):
    with pytest.raises(CaseError, match="unbalanced"):
        btheta_flows(ring3, [10.0, 0.0, 0.0])


@pytest.mark.parametrize("branches,msg", [
    ([("L1", "1", "2", 0.0, 10.0)], "nonpositive reactance"),
    ([("L1", "1", "2", 0.1, -1.0)], "nonpositive thermal"),
    ([("L1", "1", "9", 0.1, 10.0)], "unknown bus"),
    ([("L1", "1", "1", 0.1, 10.0)], "self-loop"),
])
def test_invalid_branches(branches, msg):
    with pytest.raises(CaseValidationError, match=msg):
        make_case(["1", "2"], branches)


def test_islanded_network_rejected():
    with pytest.raises(CaseValidationError, match="not connected"):
        make_case(["1", "2", "3", "4"], [("L1", "1", "2", 0.1, 10.0), ("L2", "3", "4", 0.1, 10.0)])


def test_reference_count_enforced():
    with pytest.raises(CaseValidationError, match="reference"):
        make_case(["1", "2"], [("L1", "1", "2", 0.1, 10.0)], ref="none")


def test_parse_reports_line_of_bad_field(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("base_mva: 100\nbuses:\n  - {id: 1, ref: true}\n  - {id: 2}\n"
                 "branches:\n  - {id: L1, from: 1, to: 2, x: abc, s_max: 10}\n")
    with pytest.raises(CaseParseError, match="line 6"):
        parse_case(p)


def test_parse_unknown_field(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("base_mva: 100\nbuses:\n  - {id: 1, ref: true, color: red}\n")
    with pytest.raises(CaseParseError, match="unknown field 'color'"):
        parse_case(p)


def test_dump_roundtrip(tmp_path, ring3):
    ring3.dump(tmp_path / "r.yaml")
    again = parse_case(tmp_path / "r.yaml")
    assert again.to_dict()["branches"] == ring3.to_dict()["branches"]
    assert again.ref_index == ring3.ref_index


def test_import_matpower(tmp_path):
    text = """function mpc = tiny
mpc.baseMVA = 100;
mpc.bus = [
 1 3 0 0 0 0 1 1 0 135 1 1.05 0.95;
 2 1 80 0 0 0 1 1 0 135 1 1.05 0.95;
 3 1 40 0 0 0 1 1 0 135 1 1.05 0.95;
];
mpc.gen = [
 1 0 0 300 -300 1 100 1 250 0;
 3 0 0 300 -300 1 100 0 250 0;
];
mpc.branch = [
 1 2 0.01 0.1 0 150 0 0 0 0 1 -360 360;
 2 3 0.01 0.2 0 0 0 0 0 0 1 -360 360;
 1 3 0.01 0.2 0 90 0 0 0 0 0 -360 360;
];
mpc.gencost = [
 2 0 0 3 0.01 20 0;
 2 0 0 3 0.01 30 0;
];
"""
    p = tmp_path / "tiny.m"
    p.write_text(text)
    case = import_matpower(p, default_s_max=500.0)
    assert case.n_bus == 3 and case.n_branch == 2  # out-of-service branch dropped
    assert [g.id for g in case.generators] == ["G1"]  # out-of-service generator dropped
    assert case.generators[0].cost == 20.0
    assert case.branches[1].s_max == 500.0
    assert {d.bus: d.p_peak for d in case.loads} == {"2": 80.0, "3": 40.0}
