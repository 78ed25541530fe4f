import json
from importlib import resources

import pytest
import yaml

from seriesfacts.cli import main
from seriesfacts.config import ConfigError, PRESETS, load_config, parse_overrides
from seriesfacts.instances import bundled_instance, bundled_instances, load_instance
from seriesfacts.pipeline import load_inputs

DESK_D = str(resources.files("seriesfacts") / "data" / "desk" / "desk_d.yaml")


@pytest.fixture
def infeasible_case(tmp_path):
    doc = {"base_mva": 100,
           "buses": [{"id": 1, "ref": True}, {"id": 2}],
           "branches": [{"id": "L1", "from": 1, "to": 2, "x": 0.1, "s_max": 100}],
           "generators": [{"id": "G1", "bus": 1, "cost": 10, "p_min": 500, "p_max": 600}],
           "loads": [{"id": "D1", "bus": 2, "p_peak": 50}]}
    p = tmp_path / "bad.yaml"
    p.write_text(yaml.safe_dump(doc))
    return p


def test_defaults():
    cfg = load_config()
    assert cfg.budgets.vsr == 2 and cfg.economics.alpha == 50 and cfg.economics.beta == 5000
    assert cfg.finance.rate == 0.05 and cfg.finance.lifetime == 5
    assert cfg.vsr.comp_min_frac == -0.7 and cfg.vsr.comp_max_frac == 0.2
    assert cfg.pst.angle_deg == 10 and cfg.cost.pst_per_kva == 100
    assert cfg.screening.threshold == 0.6 and cfg.algorithm.epsilon == 1e-3
    assert cfg.scenarios.clusters == 18 and cfg.solver.mip_gap == 1e-6


def test_overrides_and_presets(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text("budgets: {vsr: 1}\nvsr: {candidates: [L1, L2]}\npaths: {case: net.yaml}\n")
    cfg = load_config(p, parse_overrides(["algorithm.epsilon=1e-4", "pst.candidates=auto"]),
                      preset="C4")
    assert cfg.budgets.vsr == 1
    assert cfg.vsr.candidates == ["L1", "L2"] and cfg.pst.candidates is None
    assert cfg.paths.case == str(tmp_path / "net.yaml")
    assert cfg.algorithm.epsilon == 1e-4
    assert cfg.formulation == "btheta" and cfg.reduction.fix_directions is False
    assert set(PRESETS) == {"C1", "C2", "C3", "C4"}


@pytest.mark.parametrize("item", ["algorithm.epsilon=0", "nope.key=1", "budgets.vsr=abc",
                                  "formulation=ac", "vsr.comp_min_frac=-1.5", "solver.threads=0"])
def test_bad_overrides(item):
    with pytest.raises(ConfigError):
        load_config(None, parse_overrides([item]))


def test_instance_budgets_unless_explicit():
    cfg = load_config(None, {"paths.instance": DESK_D})
    inputs = load_inputs(cfg)
    inst = load_instance(DESK_D)
    assert (inputs.n_vsr, inputs.n_pst) == (inst.n_vsr, inst.n_pst)
    cfg = load_config(None, {"paths.instance": DESK_D, "budgets.vsr": 0})
    assert load_inputs(cfg).n_vsr == 0


def test_bundled_instances_roundtrip(tmp_path):
    names = bundled_instances()
    assert len(names) >= 5
    inst = bundled_instance(names[0])
    inst.dump(tmp_path / "i.yaml")
    again = load_instance(tmp_path / "i.yaml")
    assert again.vsr == inst.vsr and again.scenarios == inst.scenarios


def test_plan_command(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["plan", "--instance", DESK_D, "--out", str(out)])
    assert code == 0
    text = capsys.readouterr().out
    assert "status=converged" in text
    doc = json.loads((out / "report.json").read_text())
    assert doc["report"]["status"] == "converged"
    for name in ("report.txt", "iterations.csv", "curtailment.csv", "screening.txt"):
        assert (out / name).exists()


def test_plan_gap_not_closed(tmp_path):
    code = main(["plan", "--instance", DESK_D, "--out", str(tmp_path),
                 "--set", "algorithm.max_iter=1"])
    assert code == 4


def test_dcopf_and_screen_commands(tmp_path):
    assert main(["dcopf", "--instance", DESK_D, "--scenario-id", "1", "--out", str(tmp_path),
                 "--formulation", "btheta"]) == 0
    doc = json.loads((tmp_path / "dcopf_s1_btheta.json").read_text())
    assert doc["status"] == "optimal" and doc["size"]["variables"] > 0
    assert main(["screen", "--instance", DESK_D, "--out", str(tmp_path)]) == 0
    assert "monitored lines" in (tmp_path / "screening.txt").read_text()


def test_exit_codes(tmp_path, infeasible_case, capsys):
    assert main(["dcopf", "--instance", DESK_D, "--scenario-id", "99",
                 "--out", str(tmp_path)]) == 2
    assert "unknown scenario id 99" in capsys.readouterr().err
    assert main(["plan", "--instance", DESK_D, "--set", "algorithm.epsilon=0"]) == 2
    assert main(["plan", "--case", str(tmp_path / "missing.yaml")]) == 2
    assert main(["dcopf", "--case", str(infeasible_case), "--scenario-id", "1",
                 "--out", str(tmp_path)]) == 3


def test_import_case(tmp_path):
    src = tmp_path / "c.m"
    src.write_text("mpc.baseMVA = 100;\nmpc.bus = [1 3 0; 2 1 50;];\n"
                   "mpc.gen = [1 0 0 0 0 1 100 1 200 0];\n"
                   "mpc.branch = [1 2 0 0.1 0 0 0 0 0 0 1];\n")
    assert main(["import-case", str(src), str(tmp_path / "c.yaml")]) == 0
    assert main(["dcopf", "--case", str(tmp_path / "c.yaml"), "--scenario-id", "19",
                 "--out", str(tmp_path)]) == 0
