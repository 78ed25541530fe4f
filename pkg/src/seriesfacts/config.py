"""Run configuration: nested dataclasses loaded from YAML and overridden by dotted keys."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .bilevel import CcgConfig, DEFAULT_ALPHA, DEFAULT_M_LAMBDA
from .devices import DeviceSettings
from .market import DEFAULT_BETA, FORMULATIONS, _norm_formulation
from .screening import ScreeningConfig


class ConfigError(ValueError):
    pass


@dataclass
class Paths:
    case: str | None = None
    instance: str | None = None  # self-contained planning instance (overrides case/candidates)
    scenario_table: str | None = None
    profiles: str | None = None
    wind_profiles: str | None = None
    output_dir: str = "out"


@dataclass
class Budgets:
    vsr: int = 2
    pst: int = 2


@dataclass
class Economics:
    alpha: float = DEFAULT_ALPHA  # $/MWh spilled wind
    beta: float = DEFAULT_BETA  # $/MWh shed load


@dataclass
class Finance:
    rate: float = 0.05
    lifetime: float = 5.0


@dataclass
class VsrSection:
    comp_min_frac: float = -0.7  # fraction of x_k
    comp_max_frac: float = 0.2
    candidates: list[str] | None = None  # None ("auto") runs the screening ranking


@dataclass
class PstSection:
    angle_deg: float = 10.0
    candidates: list[str] | None = None


@dataclass
class Cost:
    pst_per_kva: float = 100.0


@dataclass
class BigM:
    m1_scale: float = 2.0
    m2_scale: float = 3.5
    m_lambda: float = DEFAULT_M_LAMBDA


@dataclass
class Screening:
    top_n_vsr: int = 10
    top_n_pst: int = 10
    threshold: float = 0.60
    dead_band: float = 1e-3
    rel_step: float = 0.01


@dataclass
class Reduction:
    fix_directions: bool = True
    monitor_lines: bool = True


@dataclass
class Algorithm:
    epsilon: float = 1e-3
    max_iter: int = 20


@dataclass
class Scenarios:
    clusters: int = 18
    seed: int = 0


@dataclass
class Solver:
    mip_gap: float = 1e-6
    time_limit_s: float | None = 3 * 3600.0  # per master-problem solve
    threads: int = 1  # scenario subproblem workers


@dataclass
class RunConfig:
    paths: Paths = field(default_factory=Paths)
    budgets: Budgets = field(default_factory=Budgets)
    economics: Economics = field(default_factory=Economics)
    finance: Finance = field(default_factory=Finance)
    vsr: VsrSection = field(default_factory=VsrSection)
    pst: PstSection = field(default_factory=PstSection)
    cost: Cost = field(default_factory=Cost)
    bigm: BigM = field(default_factory=BigM)
    screening: Screening = field(default_factory=Screening)
    reduction: Reduction = field(default_factory=Reduction)
    algorithm: Algorithm = field(default_factory=Algorithm)
    scenarios: Scenarios = field(default_factory=Scenarios)
    solver: Solver = field(default_factory=Solver)
    formulation: str = "shift-factor"
    # dotted keys set explicitly by a file, preset or override
    explicit: set[str] = field(default_factory=set, repr=False, compare=False)

    def validate(self) -> "RunConfig":
        try:
            self.formulation = _norm_formulation(self.formulation)
        except ValueError as exc:
            raise ConfigError(f"formulation: {exc}; choose from {FORMULATIONS}") from None
        checks = [
            (self.budgets.vsr >= 0 and self.budgets.pst >= 0, "budgets must be >= 0"),
            (self.economics.alpha >= 0 and self.economics.beta > 0, "economics.alpha >= 0, economics.beta > 0"),
            (self.finance.rate > 0 and self.finance.lifetime >= 1, "finance.rate > 0 and finance.lifetime >= 1"),
            (self.vsr.comp_min_frac > -1, "vsr.comp_min_frac: total reactance nonpositive"),
            (self.vsr.comp_min_frac <= self.vsr.comp_max_frac,
             "vsr.comp_min_frac must not exceed vsr.comp_max_frac"),
            (self.pst.angle_deg > 0, "pst.angle_deg must be > 0"),
            (self.cost.pst_per_kva >= 0, "cost.pst_per_kva must be >= 0"),
            (self.bigm.m1_scale > 0 and self.bigm.m2_scale > 0 and self.bigm.m_lambda > 0,
             "big-M scales must be > 0"),
            (self.algorithm.epsilon >= 1e-6, "algorithm.epsilon must be >= 1e-6"),
            (self.algorithm.max_iter >= 1, "algorithm.max_iter must be >= 1"),
            (self.solver.mip_gap >= 0, "solver.mip_gap must be >= 0"),
            (self.solver.time_limit_s is None or self.solver.time_limit_s > 0,
             "solver.time_limit_s must be > 0"),
            (self.screening.threshold >= 0, "screening.threshold must be >= 0"),
            (self.screening.top_n_vsr >= 0 and self.screening.top_n_pst >= 0, "top-n must be >= 0"),
            (0 < self.screening.rel_step < 1, "screening.rel_step must lie in (0, 1)"),
            (self.screening.dead_band >= 0, "screening.dead_band must be >= 0"),
            (self.scenarios.clusters >= 1, "scenarios.clusters must be >= 1"),
            (self.solver.threads >= 1, "solver.threads must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self

    # -- derived settings ---------------------------------------------------
    def device_settings(self) -> DeviceSettings:
        return DeviceSettings(self.vsr.comp_min_frac, self.vsr.comp_max_frac, self.pst.angle_deg,
                              self.cost.pst_per_kva, self.finance.rate, self.finance.lifetime,
                              self.bigm.m1_scale, self.bigm.m2_scale)

    def screening_config(self) -> ScreeningConfig:
        s = self.screening
        return ScreeningConfig(s.top_n_vsr, s.top_n_pst, s.threshold, s.dead_band, s.rel_step,
                               fix_directions=self.reduction.fix_directions,
                               monitor=self.reduction.monitor_lines, beta=self.economics.beta,
                               workers=self.solver.threads)

    def ccg_config(self) -> CcgConfig:
        a = self.algorithm
        return CcgConfig(a.epsilon, a.max_iter, self.solver.time_limit_s, self.solver.mip_gap,
                         self.bigm.m_lambda, self.solver.threads)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("explicit")
        return d


# the four computational cases: formulation x direction-fixing
PRESETS = {
    "C1": {"formulation": "shift-factor", "reduction.fix_directions": True,
           "reduction.monitor_lines": True},
    "C2": {"formulation": "btheta", "reduction.fix_directions": True,
           "reduction.monitor_lines": False},
    "C3": {"formulation": "shift-factor", "reduction.fix_directions": False,
           "reduction.monitor_lines": True},
    "C4": {"formulation": "btheta", "reduction.fix_directions": False,
           "reduction.monitor_lines": False},
}


def _coerce(value: Any, current: Any, key: str, hint) -> Any:
    if isinstance(value, str):
        try:
            value = yaml.safe_load(value)
        except yaml.YAMLError:
            pass
    if value is None:
        if "None" not in str(hint):
            raise ConfigError(f"{key}: a value is required")
        return None
    if isinstance(current, bool) or hint in ("bool", bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(current, int) or hint in ("int", int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(current, float) or "float" in str(hint):
        if isinstance(value, str):
            try:
                value = float(value)  # YAML 1.1 leaves "1e-4" as a string
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if "list" in str(hint):
        if value == "auto":
            return None
        if isinstance(value, str):
            value = [v for v in value.split(",") if v]
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return [str(v) for v in value]
    return str(value)


def set_key(cfg: RunConfig, key: str, value: Any) -> None:
    """Assign ``value`` to a dotted key such as ``algorithm.epsilon``."""
    parts = key.split(".")
    obj = cfg
    for p in parts[:-1]:
        if not dataclasses.is_dataclass(obj) or not hasattr(obj, p):
            raise ConfigError(f"unknown config key {key!r}")
        obj = getattr(obj, p)
    name = parts[-1]
    if key == "explicit":
        raise ConfigError(f"unknown config key {key!r}")
    fields = {f.name: f for f in dataclasses.fields(obj)} if dataclasses.is_dataclass(obj) else {}
    if name not in fields or dataclasses.is_dataclass(getattr(obj, name)):
        raise ConfigError(f"unknown config key {key!r}")
    setattr(obj, name, _coerce(value, getattr(obj, name), key, fields[name].type))
    cfg.explicit.add(key)


def _flatten(doc: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in doc.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_config(path=None, overrides: dict[str, Any] | None = None,
                preset: str | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        try:
            doc = yaml.safe_load(path.read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        base = path.parent
        for key, value in _flatten(doc).items():
            if key.startswith("paths.") and isinstance(value, str) and key != "paths.output_dir":
                value = str((base / value)) if not Path(value).is_absolute() else value
            set_key(cfg, key, value)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        for key, value in PRESETS[preset].items():
            set_key(cfg, key, value)
    for key, value in (overrides or {}).items():
        set_key(cfg, key, value)
    return cfg.validate()


def parse_overrides(items) -> dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out
