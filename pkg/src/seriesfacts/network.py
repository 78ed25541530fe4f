"""Network cases, branch susceptances, PTDF and reference DC flows.

Case files are YAML documents::

    name: three_bus
    base_mva: 100
    buses:
      - {id: 1}
      - {id: 3, ref: true}
    branches:
      - {id: L13, from: 1, to: 3, x: 0.1, s_max: 50}
    generators:
      - {id: G1, bus: 1, cost: 10, p_min: 0, p_max: 200}
    loads:
      - {id: D3, bus: 3, p_peak: 120}
    wind_farms:
      - {id: W1, bus: 1, capacity: 100, profile: wind_intensity, intensity_scale: 1.0}

Power is in MW, reactance in p.u. on ``base_mva``.  Ids are stored as strings.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
import yaml

logger = logging.getLogger(__name__)

BALANCE_TOL = 1e-6


class CaseError(ValueError):
    pass


class CaseParseError(CaseError):
    pass


class CaseValidationError(CaseError):
    pass


class IslandedNetworkError(CaseError):
    pass


@dataclass(frozen=True)
class Bus:
    id: str
    ref: bool = False


@dataclass(frozen=True)
class Branch:
    id: str
    from_bus: str
    to_bus: str
    x: float
    s_max: float


@dataclass(frozen=True)
class Generator:
    id: str
    bus: str
    cost: float
    p_min: float
    p_max: float


@dataclass(frozen=True)
class Load:
    id: str
    bus: str
    p_peak: float


@dataclass(frozen=True)
class WindFarm:
    id: str
    bus: str
    capacity: float
    profile: str = "wind_intensity"
    intensity_scale: float = 1.0


@dataclass(frozen=True)
class NetworkCase:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...] = ()
    loads: tuple[Load, ...] = ()
    wind_farms: tuple[WindFarm, ...] = ()
    base_mva: float = 100.0
    name: str = "case"

    def __post_init__(self):
        validate_case(self)

    # index maps
    @cached_property
    def bus_index(self) -> dict[str, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def branch_index(self) -> dict[str, int]:
        return {k.id: i for i, k in enumerate(self.branches)}

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    @cached_property
    def ref_index(self) -> int:
        return next(i for i, b in enumerate(self.buses) if b.ref)

    @cached_property
    def from_idx(self) -> np.ndarray:
        return np.array([self.bus_index[k.from_bus] for k in self.branches], dtype=int)

    @cached_property
    def to_idx(self) -> np.ndarray:
        return np.array([self.bus_index[k.to_bus] for k in self.branches], dtype=int)

    @cached_property
    def x(self) -> np.ndarray:
        return np.array([k.x for k in self.branches], dtype=float)

    @cached_property
    def s_max(self) -> np.ndarray:
        return np.array([k.s_max for k in self.branches], dtype=float)

    @cached_property
    def incidence(self) -> sp.csr_matrix:
        """Branch-bus incidence, +1 at the from bus and -1 at the to bus."""
        nl = self.n_branch
        rows = np.r_[np.arange(nl), np.arange(nl)]
        cols = np.r_[self.from_idx, self.to_idx]
        vals = np.r_[np.ones(nl), -np.ones(nl)]
        return sp.csr_matrix((vals, (rows, cols)), shape=(nl, self.n_bus))

    def gen_bus_idx(self) -> np.ndarray:
        return np.array([self.bus_index[g.bus] for g in self.generators], dtype=int)

    def load_bus_idx(self) -> np.ndarray:
        return np.array([self.bus_index[d.bus] for d in self.loads], dtype=int)

    def wind_bus_idx(self) -> np.ndarray:
        return np.array([self.bus_index[w.bus] for w in self.wind_farms], dtype=int)

    # derived cases
    def with_reference(self, bus_id) -> "NetworkCase":
        bus_id = str(bus_id)
        buses = tuple(replace(b, ref=(b.id == bus_id)) for b in self.buses)
        return replace(self, buses=buses)

    def with_reactance(self, branch_id, x: float) -> "NetworkCase":
        branch_id = str(branch_id)
        branches = tuple(replace(k, x=x) if k.id == branch_id else k for k in self.branches)
        return replace(self, branches=branches)

    def scaled(self, load: float = 1.0, s_max: float = 1.0) -> "NetworkCase":
        return replace(
            self,
            loads=tuple(replace(d, p_peak=d.p_peak * load) for d in self.loads),
            branches=tuple(replace(k, s_max=k.s_max * s_max) for k in self.branches),
        )

    def to_dict(self) -> dict:
        def strip(obj, renames=()):
            d = dict(obj.__dict__)
            for a, b in renames:
                d[b] = d.pop(a)
            return d
        return {
            "name": self.name,
            "base_mva": self.base_mva,
            "buses": [{"id": b.id, **({"ref": True} if b.ref else {})} for b in self.buses],
            "branches": [strip(k, (("from_bus", "from"), ("to_bus", "to"))) for k in self.branches],
            "generators": [strip(g) for g in self.generators],
            "loads": [strip(d) for d in self.loads],
            "wind_farms": [strip(w) for w in self.wind_farms],
        }

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


def validate_case(case: NetworkCase) -> None:
    ids = [b.id for b in case.buses]
    if len(set(ids)) != len(ids):
        raise CaseValidationError("duplicate bus id")
    nref = sum(b.ref for b in case.buses)
    if nref != 1:
        raise CaseValidationError(f"exactly one reference bus required, found {nref}")
    if case.base_mva <= 0:
        raise CaseValidationError("nonpositive base_mva")
    known = set(ids)
    for group in ("branches", "generators", "loads", "wind_farms"):
        items = getattr(case, group)
        gids = [it.id for it in items]
        if len(set(gids)) != len(gids):
            raise CaseValidationError(f"duplicate id in {group}")
    for k in case.branches:
        if not (k.x > 0):
            raise CaseValidationError(f"nonpositive reactance on branch {k.id}")
        if not (k.s_max > 0):
            raise CaseValidationError(f"nonpositive thermal limit on branch {k.id}")
        for b in (k.from_bus, k.to_bus):
            if b not in known:
                raise CaseValidationError(f"branch {k.id} references unknown bus {b}")
        if k.from_bus == k.to_bus:
            raise CaseValidationError(f"branch {k.id} is a self-loop")
    for g in case.generators:
        if g.bus not in known:
            raise CaseValidationError(f"generator {g.id} references unknown bus {g.bus}")
        if g.p_min > g.p_max or g.p_min < 0:
            raise CaseValidationError(f"generator {g.id} has invalid limits")
    for d in case.loads:
        if d.bus not in known:
            raise CaseValidationError(f"load {d.id} references unknown bus {d.bus}")
        if d.p_peak < 0:
            raise CaseValidationError(f"load {d.id} has negative peak")
    for w in case.wind_farms:
        if w.bus not in known:
            raise CaseValidationError(f"wind farm {w.id} references unknown bus {w.bus}")
        if w.capacity < 0:
            raise CaseValidationError(f"wind farm {w.id} has negative capacity")
    idx = {b: i for i, b in enumerate(ids)}
    n = len(ids)
    if n > 1:
        rows = [idx[k.from_bus] for k in case.branches]
        cols = [idx[k.to_bus] for k in case.branches]
        adj = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        ncomp, _ = connected_components(adj, directed=False)
        if ncomp != 1:
            raise CaseValidationError("network not connected")


# -- parsing -----------------------------------------------------------------

class _LineLoader(yaml.SafeLoader):
    """SafeLoader that remembers the source line of every mapping."""


def _construct_mapping(loader, node, deep=False):
    mapping = yaml.SafeLoader.construct_mapping(loader, node, deep=deep)
    mapping["__line__"] = node.start_mark.line + 1
    return mapping


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)

_SCHEMA = {
    "buses": ({"id"}, {"ref"}),
    "branches": ({"id", "from", "to", "x", "s_max"}, set()),
    "generators": ({"id", "bus", "cost", "p_max"}, {"p_min"}),
    "loads": ({"id", "bus", "p_peak"}, set()),
    "wind_farms": ({"id", "bus", "capacity"}, {"profile", "intensity_scale"}),
}


def _number(entry, key, section):
    value = entry[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise CaseParseError(
            f"{section}[line {entry.get('__line__', '?')}]: field '{key}' must be a number, got {value!r}")
    return float(value)


def _records(doc, section):
    items = doc.get(section, []) or []
    if not isinstance(items, list):
        raise CaseParseError(f"section '{section}' (line {doc.get('__line__', '?')}) must be a list")
    required, optional = _SCHEMA[section]
    out = []
    for entry in items:
        if not isinstance(entry, dict):
            raise CaseParseError(f"section '{section}': every entry must be a mapping, got {entry!r}")
        line = entry.get("__line__", "?")
        keys = set(entry) - {"__line__"}
        missing = required - keys
        if missing:
            raise CaseParseError(f"{section} entry at line {line}: missing field '{sorted(missing)[0]}'")
        unknown = keys - required - optional
        if unknown:
            raise CaseParseError(f"{section} entry at line {line}: unknown field '{sorted(unknown)[0]}'")
        out.append(entry)
    return out


def case_from_dict(doc: dict, name: str = "case") -> NetworkCase:
    if not isinstance(doc, dict):
        raise CaseParseError("case document must be a mapping")
    for key in doc:
        if key not in _SCHEMA and key not in ("base_mva", "name", "__line__"):
            raise CaseParseError(f"unknown top-level field '{key}'")
    if "base_mva" not in doc:
        raise CaseParseError("missing field 'base_mva'")
    base = doc["base_mva"]
    if isinstance(base, bool) or not isinstance(base, (int, float)):
        raise CaseParseError(f"field 'base_mva' must be a number, got {base!r}")
    buses = tuple(Bus(str(e["id"]), bool(e.get("ref", False))) for e in _records(doc, "buses"))
    branches = tuple(
        Branch(str(e["id"]), str(e["from"]), str(e["to"]),
               _number(e, "x", "branches"), _number(e, "s_max", "branches"))
        for e in _records(doc, "branches"))
    gens = tuple(
        Generator(str(e["id"]), str(e["bus"]), _number(e, "cost", "generators"),
                  float(e.get("p_min", 0.0)), _number(e, "p_max", "generators"))
        for e in _records(doc, "generators"))
    loads = tuple(Load(str(e["id"]), str(e["bus"]), _number(e, "p_peak", "loads"))
                  for e in _records(doc, "loads"))
    farms = tuple(
        WindFarm(str(e["id"]), str(e["bus"]), _number(e, "capacity", "wind_farms"),
                 str(e.get("profile", "wind_intensity")), float(e.get("intensity_scale", 1.0)))
        for e in _records(doc, "wind_farms"))
    return NetworkCase(buses, branches, gens, loads, farms, float(base), str(doc.get("name", name)))


def parse_case(path) -> NetworkCase:
    path = Path(path)
    try:
        doc = yaml.load(path.read_text(), Loader=_LineLoader)
    except yaml.YAMLError as exc:
        raise CaseParseError(f"{path}: {exc}") from exc
    return case_from_dict(doc, name=path.stem)


# -- DC network quantities -----------------------------------------------------

def branch_susceptance(case: NetworkCase) -> np.ndarray:
    """Series susceptance b_k = 1/x_k (positive: flow = b_k * angle difference)."""
    return 1.0 / case.x


@dataclass(frozen=True)
class PtdfMatrix:
    H: np.ndarray
    branch_ids: tuple[str, ...]
    bus_ids: tuple[str, ...]

    def row(self, branch_id) -> np.ndarray:
        return self.H[self.branch_ids.index(str(branch_id))]

    def rows(self, branch_ids: Iterable) -> "PtdfMatrix":
        ids = tuple(str(b) for b in branch_ids)
        pos = [self.branch_ids.index(b) for b in ids]
        return PtdfMatrix(self.H[pos], ids, self.bus_ids)

    @property
    def row_index(self) -> dict[str, int]:
        return {b: i for i, b in enumerate(self.branch_ids)}


def _reduced_factor(case: NetworkCase):
    b = branch_susceptance(case)
    A = case.incidence.toarray()
    Bbus = A.T @ (b[:, None] * A)
    keep = np.array([i for i in range(case.n_bus) if i != case.ref_index], dtype=int)
    Bred = Bbus[np.ix_(keep, keep)]
    try:
        factor = sla.cho_factor(Bred)
    except np.linalg.LinAlgError as exc:
        raise IslandedNetworkError("islanded network") from exc
    if np.linalg.cond(Bred) > 1e14:
        raise IslandedNetworkError("islanded network")
    return factor, keep, b, A


def compute_ptdf(case: NetworkCase, monitored: Sequence | None = None) -> PtdfMatrix:
    """Flow on each monitored branch per MW injected at a bus and withdrawn at the reference."""
    if monitored is None:
        monitored = [k.id for k in case.branches]
    monitored = [str(m) for m in monitored]
    for m in monitored:
        if m not in case.branch_index:
            raise CaseError(f"unknown branch {m!r}")
    if case.n_bus == 1:
        return PtdfMatrix(np.zeros((len(monitored), 1)), tuple(monitored), (case.buses[0].id,))
    factor, keep, b, A = _reduced_factor(case)
    rows = np.array([case.branch_index[m] for m in monitored], dtype=int)
    W = b[rows, None] * A[np.ix_(rows, keep)]
    H = np.zeros((len(rows), case.n_bus))
    if len(rows):
        # H_red = W Bred^-1; Bred symmetric so solve Bred H_red' = W'
        H[:, keep] = sla.cho_solve(factor, W.T).T
    return PtdfMatrix(H, tuple(monitored), tuple(b_.id for b_ in case.buses))


def btheta_flows(case: NetworkCase, injections) -> np.ndarray:
    """Branch flows (MW) from a balanced nodal injection vector (MW) by a Btheta solve."""
    p = np.asarray(injections, dtype=float)
    if p.shape != (case.n_bus,):
        raise CaseError(f"injection vector must have length {case.n_bus}")
    if abs(p.sum()) > BALANCE_TOL * max(1.0, np.abs(p).max(initial=0.0)):
        raise CaseError(f"unbalanced injections (sum {p.sum():.3g} MW)")
    theta = bus_angles(case, p)
    return branch_susceptance(case) * (theta[case.from_idx] - theta[case.to_idx]) * case.base_mva


def bus_angles(case: NetworkCase, injections) -> np.ndarray:
    """Bus angles in radians with the reference angle at zero."""
    p = np.asarray(injections, dtype=float) / case.base_mva
    theta = np.zeros(case.n_bus)
    if case.n_bus == 1:
        return theta
    factor, keep, _, _ = _reduced_factor(case)
    theta[keep] = sla.cho_solve(factor, p[keep])
    return theta


# -- MATPOWER import -----------------------------------------------------------

_MATRIX_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;", re.S)
_SCALAR_RE = re.compile(r"mpc\.baseMVA\s*=\s*([0-9.eE+-]+)\s*;")


def _parse_matrix(body: str) -> np.ndarray:
    rows = []
    for line in body.splitlines():
        line = line.split("%", 1)[0].strip().rstrip(";").strip()
        if not line:
            continue
        for chunk in line.split(";"):
            chunk = chunk.strip()
            if chunk:
                rows.append([float(v) for v in chunk.replace(",", " ").split()])
    width = max((len(r) for r in rows), default=0)
    return np.array([r + [0.0] * (width - len(r)) for r in rows])


def import_matpower(path, default_s_max: float = 9900.0) -> NetworkCase:
    """Convert a MATPOWER ``.m`` case (bus/branch/gen/gencost) to a NetworkCase.

    Out-of-service branches and generators are dropped, a zero ``rateA`` is
    replaced by ``default_s_max``, and the linear gencost term becomes the
    generator cost.  Loads are taken from the bus ``Pd`` column.
    """
    text = Path(path).read_text()
    mats = {m.group(1): _parse_matrix(m.group(2)) for m in _MATRIX_RE.finditer(text)}
    base = _SCALAR_RE.search(text)
    if base is None or "bus" not in mats or "branch" not in mats or "gen" not in mats:
        raise CaseParseError(f"{path}: expected mpc.baseMVA, mpc.bus, mpc.branch and mpc.gen")
    base_mva = float(base.group(1))
    bus, branch, gen = mats["bus"], mats["branch"], mats["gen"]
    gencost = mats.get("gencost")

    buses = tuple(Bus(str(int(r[0])), int(r[1]) == 3) for r in bus)
    loads = tuple(Load(f"D{int(r[0])}", str(int(r[0])), float(r[2])) for r in bus if r[2] > 0)
    branches = []
    for i, r in enumerate(branch):
        status = r[10] if len(r) > 10 else 1
        if status == 0:
            continue
        rate = r[5] if r[5] > 0 else default_s_max
        branches.append(Branch(str(i + 1), str(int(r[0])), str(int(r[1])), float(r[3]), float(rate)))
    gens = []
    for i, r in enumerate(gen):
        status = r[7] if len(r) > 7 else 1
        if status <= 0:
            continue
        cost = 0.0
        if gencost is not None and i < len(gencost):
            c = gencost[i]
            if int(c[0]) == 2:
                ncoef = int(c[3])
                coefs = c[4:4 + ncoef]
                cost = float(coefs[-2]) if ncoef >= 2 else 0.0
            else:
                # piecewise linear: average slope over the first segment
                x1, y1, x2, y2 = c[4], c[5], c[6], c[7]
                cost = float((y2 - y1) / (x2 - x1)) if x2 != x1 else 0.0
        gens.append(Generator(f"G{i + 1}", str(int(r[0])), cost, max(0.0, float(r[9])), float(r[8])))
    return NetworkCase(buses, tuple(branches), tuple(gens), loads, (), base_mva, Path(path).stem)
