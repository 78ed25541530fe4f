"""Load-wind operating scenarios.

Hourly profiles are reduced to a weighted scenario set: the peak-load hour
and the peak-wind hour are kept as one-hour scenarios, the remaining hours
are clustered with seeded Lloyd iterations, and every cluster becomes one
scenario weighted by its member count.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .network import NetworkCase

logger = logging.getLogger(__name__)

WIND_PREFIX = "wind_intensity"
MAX_ITER = 300


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class HourlyProfile:
    load: np.ndarray  # (hours,)
    wind: np.ndarray  # (hours, groups)
    groups: tuple[str, ...] = (WIND_PREFIX,)
    hour_ids: np.ndarray | None = None  # original hour positions

    def __post_init__(self):
        load = np.asarray(self.load, dtype=float)
        wind = np.asarray(self.wind, dtype=float)
        if wind.ndim == 1:
            wind = wind[:, None]
        object.__setattr__(self, "load", load)
        object.__setattr__(self, "wind", wind)
        if self.hour_ids is None:
            object.__setattr__(self, "hour_ids", np.arange(len(load)))
        if wind.shape[0] != load.shape[0]:
            raise ScenarioError("length mismatch between load and wind series")
        if wind.shape[1] != len(self.groups):
            raise ScenarioError("wind columns do not match group names")
        if np.any(load <= 0):
            raise ScenarioError("load level out of range (must be > 0)")
        if np.any((wind < 0) | (wind > 1)):
            raise ScenarioError("intensity out of range [0, 1]")

    @property
    def hours(self) -> int:
        return len(self.load)

    def points(self) -> np.ndarray:
        return np.column_stack([self.load, self.wind])

    def subset(self, mask) -> "HourlyProfile":
        return HourlyProfile(self.load[mask], self.wind[mask], self.groups, self.hour_ids[mask])


@dataclass(frozen=True)
class Scenario:
    id: int
    hours: float
    load_level: float
    wind: Mapping[str, float]
    kind: str = "cluster"

    def intensity(self, group: str) -> float:
        if group in self.wind:
            return self.wind[group]
        if len(self.wind) == 1:
            return next(iter(self.wind.values()))
        raise ScenarioError(f"scenario {self.id} has no wind column {group!r}")


@dataclass(frozen=True)
class ScenarioData:
    """One scenario materialised on a network: MW demand per load, MW available per farm."""
    id: int
    hours: float
    load_mw: np.ndarray
    wind_mw: np.ndarray
    load_level: float = 1.0


@dataclass(frozen=True)
class ScenarioSet:
    scenarios: tuple[Scenario, ...]
    seed: int | None = None

    def __len__(self):
        return len(self.scenarios)

    def __iter__(self):
        return iter(self.scenarios)

    @property
    def total_hours(self) -> float:
        return float(sum(s.hours for s in self.scenarios))

    def by_id(self, sid: int) -> Scenario:
        for s in self.scenarios:
            if s.id == int(sid):
                return s
        raise ScenarioError(f"unknown scenario id {sid}")

    def extremes(self) -> tuple[Scenario, Scenario]:
        """(highest-load scenario, highest-wind scenario); lowest id wins ties."""
        peak_load = max(self.scenarios, key=lambda s: (s.load_level, -s.id))
        peak_wind = max(self.scenarios, key=lambda s: (sum(s.wind.values()), -s.id))
        return peak_load, peak_wind

    def materialize(self, case: NetworkCase,
                    farm_scaling: Mapping[str, float] | None = None) -> list[ScenarioData]:
        return [materialize_scenario(s, case, farm_scaling) for s in self.scenarios]

    # CSV columns: id, hours, load_level, wind_intensity
    def to_csv(self, path) -> None:
        groups = sorted({g for s in self.scenarios for g in s.wind})
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "hours", "load_level", *groups])
            for s in self.scenarios:
                w.writerow([s.id, _fmt(s.hours), f"{s.load_level:.6g}",
                            *[f"{s.wind.get(g, 0.0):.6g}" for g in groups]])


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else f"{v:.6g}"


def materialize_scenario(s: Scenario, case: NetworkCase,
                         farm_scaling: Mapping[str, float] | None = None) -> ScenarioData:
    farm_scaling = farm_scaling or {}
    load = np.array([s.load_level * d.p_peak for d in case.loads])
    wind = []
    for f in case.wind_farms:
        scale = farm_scaling.get(f.id, f.intensity_scale)
        wind.append(float(np.clip(s.intensity(f.profile) * scale, 0.0, 1.0)) * f.capacity)
    return ScenarioData(s.id, s.hours, load, np.array(wind), s.load_level)


# -- profiles ------------------------------------------------------------------

def _read_columns(path) -> dict[str, list[float]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise ScenarioError(f"{path}: empty file")
    try:
        float(rows[0][0])
        header = None
    except ValueError:
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
    cols: dict[str, list[float]] = {}
    for lineno, r in enumerate(rows, start=2 if header else 1):
        for j, cell in enumerate(r):
            name = header[j] if header else f"col{j}"
            try:
                cols.setdefault(name, []).append(float(cell))
            except ValueError:
                raise ScenarioError(f"{path}:{lineno}: not a number: {cell!r}") from None
    return cols


def ingest_profiles(load_path, wind_path=None) -> HourlyProfile:
    """Read hourly load levels and wind intensities.

    Either two single-column files, or one file (``load_path``) holding a
    ``load_level`` column plus ``wind_intensity`` / ``wind_intensity_<farm>``
    columns.
    """
    lcols = _read_columns(load_path)
    load = lcols.get("load_level") or next(iter(lcols.values()))
    wcols = _read_columns(wind_path) if wind_path is not None else lcols
    wind_names = [n for n in wcols if n.startswith(WIND_PREFIX)]
    if not wind_names:
        if wind_path is None:
            raise ScenarioError("no wind_intensity column found")
        wind_names = [n for n in wcols if n != "load_level"][:1]
        groups = (WIND_PREFIX,)
    else:
        groups = tuple(wind_names)
    if any(len(wcols[n]) != len(load) for n in wind_names):
        raise ScenarioError(f"length mismatch: {len(load)} load rows vs "
                            f"{len(wcols[wind_names[0]])} wind rows")
    wind = np.column_stack([wcols[n] for n in wind_names])
    return HourlyProfile(np.array(load), wind, groups)


def extract_extremes(profile: HourlyProfile) -> tuple[list[Scenario], HourlyProfile]:
    """Split off the peak-load hour and the peak-wind hour as one-hour scenarios."""
    if profile.hours == 0:
        raise ScenarioError("empty profile")
    i_load = int(np.argmax(profile.load))  # argmax returns the first maximum
    i_wind = int(np.argmax(profile.wind.sum(axis=1)))
    picks = [i_load, i_wind]
    if i_wind == i_load and profile.hours > 1:
        # the same hour cannot stand for both; take the next-best wind hour
        order = np.argsort(-profile.wind.sum(axis=1), kind="stable")
        i_wind = int(next(i for i in order if i != i_load))
        picks = [i_load, i_wind]
    extremes = []
    for kind, i in zip(("peak_load", "peak_wind"), picks):
        extremes.append(Scenario(-1, 1, float(profile.load[i]),
                                 dict(zip(profile.groups, map(float, profile.wind[i]))), kind))
    mask = np.ones(profile.hours, dtype=bool)
    mask[picks] = False
    return extremes, profile.subset(mask)


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    counts: np.ndarray
    inertia_trace: list[float] = field(default_factory=list)
    iterations: int = 0


def lloyd_kmeans(points: np.ndarray, k: int, seed: int, max_iter: int = MAX_ITER) -> KMeansResult:
    """Seeded Lloyd iterations; ties go to the lowest centroid index."""
    points = np.asarray(points, dtype=float)
    n = len(points)
    if k < 1:
        raise ScenarioError("k must be at least 1")
    if k > n:
        raise ScenarioError(f"k = {k} exceeds pool size {n}")
    uniq, first = np.unique(points, axis=0, return_index=True)
    if len(uniq) < k:
        raise ScenarioError(f"only {len(uniq)} distinct points for k = {k}")
    rng = np.random.default_rng(seed)
    seeds = np.sort(rng.choice(np.sort(first), size=k, replace=False))
    centroids = points[seeds].copy()
    labels = np.full(n, -1)
    trace = []
    it = 0
    for it in range(1, max_iter + 1):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(d2, axis=1)
        counts = np.bincount(new, minlength=k)
        for j in np.flatnonzero(counts == 0):
            # re-seed an empty cluster with the point farthest from its centroid
            far = int(np.argmax(d2[np.arange(n), new]))
            new[far] = j
            counts = np.bincount(new, minlength=k)
        trace.append(float(d2[np.arange(n), new].sum()))
        if np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            centroids[j] = points[labels == j].mean(axis=0)
    counts = np.bincount(labels, minlength=k)
    return KMeansResult(centroids, labels, counts, trace, it)


def kmeans_cluster(pool: HourlyProfile, k: int, seed: int = 0) -> list[Scenario]:
    res = lloyd_kmeans(pool.points(), k, seed)
    out = []
    for j in range(k):
        c = res.centroids[j]
        out.append(Scenario(j + 1, int(res.counts[j]), float(c[0]),
                            dict(zip(pool.groups, map(float, c[1:]))), "cluster"))
    return out


def build_scenario_set(extremes: Sequence[Scenario], clusters: Sequence[Scenario],
                       seed: int | None = None) -> ScenarioSet:
    """Number clusters first and extremes last (ids from 1)."""
    scen = []
    for i, s in enumerate(list(clusters) + list(extremes), start=1):
        scen.append(Scenario(i, s.hours, s.load_level, dict(s.wind), s.kind))
    return ScenarioSet(tuple(scen), seed)


def reduce_profile(profile: HourlyProfile, k: int, seed: int = 0) -> ScenarioSet:
    extremes, pool = extract_extremes(profile)
    clusters = kmeans_cluster(pool, k, seed) if pool.hours else []
    return build_scenario_set(extremes, clusters, seed)


def read_scenario_table(path) -> ScenarioSet:
    cols = _read_columns(path)
    for need in ("id", "hours", "load_level"):
        if need not in cols:
            raise ScenarioError(f"{path}: missing column {need!r}")
    groups = [c for c in cols if c.startswith(WIND_PREFIX)]
    if not groups:
        raise ScenarioError(f"{path}: missing wind_intensity column")
    scen = []
    for i in range(len(cols["id"])):
        wind = {g: cols[g][i] for g in groups}
        if any(not (0 <= v <= 1) for v in wind.values()):
            raise ScenarioError(f"{path}: intensity out of range in row {i + 1}")
        hours = cols["hours"][i]
        scen.append(Scenario(int(cols["id"][i]), hours, cols["load_level"][i], wind,
                             "extreme" if hours == 1 else "table"))
    return ScenarioSet(tuple(scen))


def reference_table() -> ScenarioSet:
    """The 20-scenario reference table bundled with the package."""
    with resources.as_file(resources.files("seriesfacts") / "data" / "reference_scenarios.csv") as p:
        return read_scenario_table(p)


def single_scenario(load_level: float = 1.0, wind: float = 1.0, hours: float = 1.0) -> ScenarioSet:
    return ScenarioSet((Scenario(1, hours, load_level, {WIND_PREFIX: wind}, "table"),))
