"""Self-contained planning instances: case, candidates, budgets and scenarios in one YAML file.

::

    name: desk6
    case: {base_mva: 100, buses: [...], branches: [...], ...}
    candidates: {vsr: [L13, L24], pst: [L23]}
    budgets: {vsr: 1, pst: 1}
    scenarios:
      - {id: 1, hours: 3000, load_level: 0.8, wind_intensity: 0.83}
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import yaml

from .devices import DeviceCatalog, DeviceSettings, build_catalog
from .network import NetworkCase, case_from_dict
from .scenarios import Scenario, ScenarioSet, WIND_PREFIX


class InstanceError(ValueError):
    pass


@dataclass(frozen=True)
class PlanningInstance:
    name: str
    case: NetworkCase
    vsr: tuple[str, ...]
    pst: tuple[str, ...]
    n_vsr: int
    n_pst: int
    scenarios: ScenarioSet

    def catalog(self, settings: DeviceSettings | None = None) -> DeviceCatalog:
        return build_catalog(self.case, self.vsr, self.pst, settings)

    def materialized(self):
        return self.scenarios.materialize(self.case)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "case": self.case.to_dict(),
            "candidates": {"vsr": list(self.vsr), "pst": list(self.pst)},
            "budgets": {"vsr": self.n_vsr, "pst": self.n_pst},
            "scenarios": [{"id": s.id, "hours": s.hours, "load_level": s.load_level, **s.wind}
                          for s in self.scenarios],
        }

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


def instance_from_dict(doc: dict, name: str = "instance") -> PlanningInstance:
    for key in ("case", "candidates", "scenarios"):
        if key not in doc:
            raise InstanceError(f"instance {name}: missing section '{key}'")
    case = case_from_dict(doc["case"], name=doc.get("name", name))
    cand = doc["candidates"] or {}
    budgets = doc.get("budgets") or {}
    scen = []
    for row in doc["scenarios"]:
        wind = {k: float(v) for k, v in row.items() if k.startswith(WIND_PREFIX)}
        if not wind:
            raise InstanceError(f"instance {name}: scenario {row.get('id')} has no wind column")
        scen.append(Scenario(int(row["id"]), float(row["hours"]), float(row["load_level"]), wind,
                             row.get("kind", "table")))
    return PlanningInstance(
        str(doc.get("name", name)), case,
        tuple(str(b) for b in cand.get("vsr", []) or []),
        tuple(str(b) for b in cand.get("pst", []) or []),
        int(budgets.get("vsr", 0)), int(budgets.get("pst", 0)), ScenarioSet(tuple(scen)))


def load_instance(path) -> PlanningInstance:
    path = Path(path)
    return instance_from_dict(yaml.safe_load(path.read_text()), path.stem)


def bundled_instances() -> list[str]:
    root = resources.files("seriesfacts") / "data" / "desk"
    return sorted(p.name.removesuffix(".yaml") for p in root.iterdir() if p.name.endswith(".yaml"))


def bundled_instance(name: str) -> PlanningInstance:
    res = resources.files("seriesfacts") / "data" / "desk" / f"{name}.yaml"
    if not res.is_file():
        raise InstanceError(f"no bundled instance {name!r}; have {bundled_instances()}")
    return instance_from_dict(yaml.safe_load(res.read_text()), name)
