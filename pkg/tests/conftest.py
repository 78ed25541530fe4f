"""Shared fixtures and the per-criterion acceptance summary."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np
import pytest

from seriesfacts.network import Branch, Bus, Generator, Load, NetworkCase, WindFarm
from seriesfacts.scenarios import ScenarioData


def make_case(buses, branches, gens=(), loads=(), farms=(), ref="1", name="t"):
    return NetworkCase(
        tuple(Bus(str(b), ref=str(b) == ref) for b in buses),
        tuple(Branch(*br) for br in branches),
        tuple(Generator(*g) for g in gens),
        tuple(Load(*d) for d in loads),
        tuple(WindFarm(*w) for w in farms),
        100.0, name)


def snapshot(case, sid=1, hours=1.0, load_scale=1.0, wind=None):
    load = np.array([d.p_peak * load_scale for d in case.loads])
    avail = np.array(wind if wind is not None else [w.capacity for w in case.wind_farms], float)
    return ScenarioData(sid, hours, load, avail, load_scale)


@pytest.fixture
def two_bus():
    def build(limit=200.0, load=150.0):
        return make_case(["1", "2"], [("L1", "1", "2", 0.1, limit)],
                         gens=[("G1", "1", 10.0, 0.0, 200.0)], loads=[("D1", "2", load)])
    return build


@pytest.fixture
def ring3():
    """Equal reactances, 50 MW on 1-3, cheap generation at bus 1, 120 MW load at bus 3."""
    return make_case(
        ["1", "2", "3"],
        [("L12", "1", "2", 0.1, 100.0), ("L13", "1", "3", 0.1, 50.0),
         ("L23", "2", "3", 0.1, 100.0)],
        gens=[("G1", "1", 10.0, 0.0, 200.0), ("G3", "3", 50.0, 0.0, 200.0)],
        loads=[("D3", "3", 120.0)], name="ring3")


# -- acceptance summary ---------------------------------------------------------

_RESULTS: "OrderedDict[str, list[str]]" = OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion covered by a test")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m:
            _RESULTS.setdefault(m.args[0], [])


def pytest_runtest_makereport(item, call):
    m = item.get_closest_marker("criterion")
    if m is None:
        return
    if call.when == "call" or (call.when == "setup" and call.excinfo is not None):
        if call.excinfo is None:
            outcome = "passed"
        elif call.excinfo.errisinstance(pytest.skip.Exception):
            outcome = "skipped"
        elif call.excinfo.errisinstance(pytest.xfail.Exception):
            outcome = "diverged"
        else:
            outcome = "failed"
        _RESULTS.setdefault(m.args[0], []).append(outcome)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name, outcomes in _RESULTS.items():
        if not outcomes:
            verdict = "NOT RUN"
        elif "failed" in outcomes:
            verdict = "FAIL"
        elif "diverged" in outcomes:
            verdict = "DIVERGED"
        elif all(o == "skipped" for o in outcomes):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        tr.write_line(f"{verdict:<9} {name} ({len(outcomes)} test(s))")


def desk_compact(name, n_vsr=None, n_pst=None, **kw):
    """Compact form of a bundled desk instance, optionally with other budgets."""
    from seriesfacts.bilevel import assemble_compact
    from seriesfacts.instances import bundled_instance

    inst = bundled_instance(name)
    return assemble_compact(inst.case, inst.materialized(), inst.catalog(),
                            inst.n_vsr if n_vsr is None else n_vsr,
                            inst.n_pst if n_pst is None else n_pst, **kw)
