import itertools

import numpy as np
import pytest

from seriesfacts.bilevel import (BilevelError, CcgConfig, INF, MasterProblem, _dual_value_bounded,
                                 _ll_model, _objective, assemble_compact, audit_plan,
                                 brute_force_plan, evaluate_plan, relative_gap, report_from_ccg,
                                 run_ccg, solve_master, solve_sp1, solve_sp2)
from seriesfacts.devices import DeviceSettings, build_catalog
from seriesfacts.instances import bundled_instance
from seriesfacts.market import build_lower_level, solve_market
from seriesfacts.network import compute_ptdf
from seriesfacts.screening import POSITIVE
from seriesfacts.synthetic import SyntheticConfig, random_case

from conftest import desk_compact, make_case, snapshot


@pytest.fixture(scope="module")
def desk6():
    return desk_compact("desk6")


@pytest.fixture(scope="module")
def desk_d():
    return desk_compact("desk_d")


@pytest.fixture(scope="module")
def desk_d_run(desk_d):
    res = run_ccg(desk_d)
    assert res.state.q > 1 and res.state.cuts  # exercises the cut machinery
    return res


def test_compact_roundtrip_matches_market_model(desk6):
    inst = bundled_instance("desk6")
    cat = inst.catalog()
    for x in desk6.enumerate_x():
        plan = dict(zip(desk6.x_names, x))
        for t, scen in enumerate(inst.materialized()):
            direct = solve_market(build_lower_level(inst.case, scen, cat, x=plan)).objective
            assert solve_sp1(desk6, t, x) == pytest.approx(direct, rel=1e-8, abs=1e-8)


def test_investment_only_touches_device_rows(desk6):
    for blk in desk6.blocks:
        rows = np.unique(blk.K.tocoo().row)
        tags = {blk.ineq_names[i].split("_")[0] for i in rows}
        assert tags <= {"eq2lo", "eq2hi", "eq8lo", "eq8hi", "eq9lo", "eq9hi"}
        assert tags  # every candidate links somewhere


def test_sp1_equals_enumeration_over_binaries(desk6):
    x = np.array([1.0, 1.0, 1.0, 0.0])
    assert desk6.feasible_x(x)
    for t, blk in enumerate(desk6.blocks):
        best = INF
        for bits in itertools.product((0.0, 1.0), repeat=len(blk.z_names)):
            m = _ll_model(blk, x, np.array(bits))
            _objective(m, blk.y_names, blk.w)
            res = m.solve()
            if res.optimal:
                best = min(best, res.objective)
        assert solve_sp1(desk6, t, x) == pytest.approx(best, rel=1e-9, abs=1e-7)


def test_sp2_prefers_cheapest_optimum(desk6):
    x = np.array([0.0, 1.0, 0.0, 0.0])
    for t, blk in enumerate(desk6.blocks):
        phi, z = solve_sp1(desk6, t, x, return_z=True)
        sol = solve_sp2(desk6, t, x, phi, z_fallback=z)
        assert sol.phi == pytest.approx(phi, rel=1e-8, abs=1e-6)
        # the SP1 optimum re-polished for the upper objective can only be worse
        m = _ll_model(blk, x, z)
        m.add_constraint("cap", {n: c for n, c in zip(blk.y_names, blk.w) if c}, "<=",
                         phi + 1e-9 * max(1, abs(phi)))
        _objective(m, blk.y_names, blk.g)
        assert sol.upper_cost <= m.solve().objective + 1e-6


def test_ccg_matches_brute_force(desk_d, desk_d_run):
    bf = brute_force_plan(desk_d)
    assert np.array_equal(desk_d_run.x, bf.x)
    assert desk_d_run.objective == pytest.approx(bf.objective, rel=1e-3)
    assert len(bf.table) == sum(1 for _ in desk_d.enumerate_x())


def test_cuts_are_valid_for_every_plan(desk_d, desk_d_run):
    """The master with x fixed never exceeds the exact plan cost (it is a relaxation)."""
    master = desk_d_run.master
    for x in desk_d.enumerate_x():
        fixed = master.model.fix(dict(zip(desk_d.x_names, x)))
        res = fixed.solve()
        assert res.optimal
        exact = evaluate_plan(desk_d, x).objective
        assert res.objective <= exact * (1 + 1e-6) + 1e-6


def test_strong_duality_at_terminal_plan(desk_d, desk_d_run):
    x = desk_d_run.x
    for t in range(len(desk_d.blocks)):
        phi, z = solve_sp1(desk_d, t, x, return_z=True)
        dual = _dual_value_bounded(desk_d.blocks[t], x, z, INF)
        assert dual == pytest.approx(phi, rel=1e-7, abs=1e-6)


def test_products_vanish_without_investment(desk_d, desk_d_run):
    master = desk_d_run.master
    zero = master.model.fix({n: 0.0 for n in desk_d.x_names})
    res = zero.solve()
    om = [c for cut in desk_d_run.state.cuts for _, _, c in cut.omega]
    assert om and all(abs(res.value(n)) <= 1e-9 for n in om)


def test_trajectory_invariants(desk_d_run, desk_d):
    log = desk_d_run.state.log
    lbs = [r.lb for r in log]
    ubs = [r.ub for r in log]
    assert all(b >= a - 1e-9 for a, b in zip(lbs, lbs[1:]))
    assert all(b <= a + 1e-9 for a, b in zip(ubs, ubs[1:]))
    assert all(lb <= ub + 1e-6 * abs(ub) for lb, ub in zip(lbs, ubs))
    assert desk_d_run.state.gap <= 1e-3
    assert all(r.cuts_added == len(desk_d.blocks) for r in log[:-1])


def test_singleton_budget_needs_one_iteration():
    compact = desk_compact("desk_a", n_vsr=0, n_pst=0)
    assert compact.x_space_singleton()
    res = run_ccg(compact)
    assert res.state.q == 1
    assert res.state.lb == res.state.ub
    assert not res.x.any()


def test_shared_candidate_exclusive(desk6):
    shared = desk6.catalog.shared
    assert shared == ("L13",)
    i, j = desk6.x_names.index("delta_L13"), desk6.x_names.index("alpha_L13")
    assert all(not (x[i] and x[j]) for x in desk6.enumerate_x())


def test_report_is_self_consistent(desk_d, desk_d_run):
    rep = report_from_ccg(desk_d, desk_d_run)
    assert rep.recomputed_objective() == pytest.approx(rep.objective, rel=1e-9)
    assert rep.status == "converged"
    assert rep.warnings == []
    assert set(rep.vsr_locations + rep.pst_locations)


def test_audit_clean(desk_d, desk_d_run):
    assert audit_plan(desk_d, desk_d_run) == []


def test_tiny_dual_cap_is_flagged():
    """A PST pinned at its angle limit has a large multiplier; capping it must be reported."""
    ring = make_case(["1", "2", "3"], [("L12", "1", "2", 0.1, 100.0), ("L13", "1", "3", 0.1, 50.0),
                                       ("L23", "2", "3", 0.1, 100.0)],
                     gens=[("G1", "1", 10.0, 0.0, 200.0)], loads=[("D3", "3", 90.0)])
    cat = build_catalog(ring, [], ["L13"], DeviceSettings(angle_deg=0.5))
    compact = assemble_compact(ring, [snapshot(ring, hours=8760)], cat, 0, 1)
    res = run_ccg(compact)
    assert res.x.tolist() == [1.0]
    assert audit_plan(compact, res) == []
    tight = MasterProblem(compact, m_lambda=1e-3)
    res.state.cuts.append(tight.add_cut(1, 0, np.zeros(0)))
    res.master = tight
    assert any("increase M_lambda" in w for w in audit_plan(compact, res))


def test_more_investment_never_hurts(desk_d, desk_d_run):
    none = evaluate_plan(desk_d, np.zeros(desk_d.n_x)).objective
    assert desk_d_run.objective <= none + 1e-6


def test_direction_fixing_removes_binaries():
    inst = bundled_instance("desk6")
    free = desk_compact("desk6")
    fixed = desk_compact("desk6", directions={c: POSITIVE for c in inst.vsr})
    assert all(len(b.z_names) == 0 for b in fixed.blocks)
    assert sum(len(b.z_names) for b in free.blocks) == 2 * len(free.blocks)


def test_config_rejects_tiny_epsilon():
    with pytest.raises(BilevelError):
        CcgConfig(epsilon=1e-7)


def test_relative_gap():
    assert relative_gap(5.0, 5.0) == 0.0
    assert relative_gap(0.0, 0.0) == 0.0
    assert relative_gap(90.0, 100.0) == pytest.approx(0.1)
    assert relative_gap(-INF, 100.0) == INF


def test_random_instances_match_brute_force():
    """Random 6-bus cases with two VSR and two PST candidates, budgets (1, 1)."""
    checked = 0
    for seed in range(6):
        case = random_case(seed, SyntheticConfig(n_bus=6))
        ids = [k.id for k in case.branches]
        cat = build_catalog(case, ids[:2], ids[2:4])
        scen = [snapshot(case, sid=1, hours=100, load_scale=1.3),
                snapshot(case, sid=2, hours=200, load_scale=0.6)]
        compact = assemble_compact(case, scen, cat, 1, 1)
        res = run_ccg(compact)
        bf = brute_force_plan(compact)
        assert res.objective == pytest.approx(bf.objective, rel=1e-3)
        checked += 1
    assert checked == 6


def test_master_lower_bound_is_below_brute_force(desk6):
    master = MasterProblem(desk6)
    _, bound, _ = solve_master(master)
    assert bound <= brute_force_plan(desk6).objective + 1e-6


def test_shift_factor_and_btheta_lower_levels_agree():
    inst = bundled_instance("desk_b")
    sf = desk_compact("desk_b")
    bt = desk_compact("desk_b", formulation="btheta")
    for x in sf.enumerate_x():
        assert evaluate_plan(sf, x).objective == pytest.approx(
            evaluate_plan(bt, x).objective, rel=1e-7)
    assert compute_ptdf(inst.case).H.shape[0] == inst.case.n_branch
