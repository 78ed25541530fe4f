import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seriesfacts.milp_core import (BINARY, INF, Model, ModelError, SolverError, fix_and_dualize,
                                   STATUS_INFEASIBLE, STATUS_OPTIMAL, STATUS_UNBOUNDED)


def one_d():
    m = Model("one")
    m.add_variable("x", 0, INF, obj=1.0)
    m.add_constraint("floor", {"x": 1.0}, ">=", 1.0)
    return m


def test_one_d_lp_dual():
    res = one_d().solve()
    assert res.status == STATUS_OPTIMAL
    assert res.objective == pytest.approx(1.0)
    assert res.dual("floor") == pytest.approx(1.0)


def test_infeasible_and_unbounded():
    m = Model()
    m.add_variable("x", 0, 1)
    m.add_constraint("c", {"x": 1.0}, ">=", 2.0)
    assert m.solve().status == STATUS_INFEASIBLE
    u = Model()
    u.add_variable("x", -INF, INF, obj=-1.0)
    assert u.solve().status == STATUS_UNBOUNDED


def test_nan_and_duplicates_rejected():
    m = Model()
    m.add_variable("x")
    with pytest.raises(ModelError, match="duplicate variable"):
        m.add_variable("x")
    with pytest.raises(ModelError, match="non-finite"):
        m.add_constraint("c", {"x": math.nan}, "<=", 1.0)
    m.add_constraint("c", {"x": 1.0}, "<=", 1.0)
    with pytest.raises(ModelError, match="duplicate constraint"):
        m.add_constraint("c", {"x": 1.0}, "<=", 2.0)
    with pytest.raises(ModelError):
        m.add_variable("b", 0, 2, BINARY)


def test_lp_text_is_deterministic():
    a, b = one_d().to_lp(), one_d().to_lp()
    assert a == b
    assert "floor: -1 x <= -1" in a


def test_small_knapsack():
    m = Model("knap")
    for i, (v, w) in enumerate([(6, 5), (5, 4), (4, 3)]):
        m.add_variable(f"b{i}", 0, 1, BINARY, obj=-v)
    m.add_constraint("cap", {"b0": 5, "b1": 4, "b2": 3}, "<=", 8)
    res = m.solve()
    assert res.objective == pytest.approx(-10.0)
    assert res.dual_bound <= res.objective + 1e-9


def test_fix_and_dualize():
    m = Model()
    m.add_variable("u", 0, 1, BINARY)
    m.add_variable("y", 0, INF, obj=2.0)
    m.add_constraint("link", {"y": 1.0, "u": -5.0}, ">=", 0.0)
    res = fix_and_dualize(m, {"u": 1.0})
    assert res.objective == pytest.approx(10.0)
    assert res.dual("link") == pytest.approx(2.0)
    with pytest.raises(ModelError, match="unfixed"):
        fix_and_dualize(m, {})


def test_fix_and_dualize_infeasible():
    m = Model()
    m.add_variable("u", 0, 1, BINARY)
    m.add_variable("y", 0, 1)
    m.add_constraint("c", {"y": 1.0, "u": -5.0}, ">=", 0.0)
    with pytest.raises(SolverError, match="infeasible"):
        fix_and_dualize(m, {"u": 1.0})


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 6), m_rows=st.integers(1, 6), seed=st.integers(0, 10_000))
def test_strong_duality_random_lps(n, m_rows, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(m_rows, n))
    x0 = rng.uniform(0, 1, n)
    b = A @ x0 + rng.uniform(0, 1, m_rows)
    c = rng.uniform(0.1, 2, n)
    mdl = Model()
    for j in range(n):
        mdl.add_variable(f"x{j}", 0, 5, obj=c[j])
    for i in range(m_rows):
        mdl.add_constraint(f"r{i}", {f"x{j}": A[i, j] for j in range(n)}, "<=", b[i])
    res = mdl.solve()  # raises DualityError when primal and dual objectives disagree
    assert res.optimal
    assert all(res.dual(f"r{i}") >= 0 for i in range(m_rows))
