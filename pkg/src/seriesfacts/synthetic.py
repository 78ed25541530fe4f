"""Random connected test networks and injection vectors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Branch, Bus, Generator, Load, NetworkCase, WindFarm


@dataclass(frozen=True)
class SyntheticConfig:
    n_bus: int = 10
    extra_branch_ratio: float = 0.5  # extra branches per bus on top of the spanning tree
    x_range: tuple[float, float] = (0.05, 0.3)
    s_max_range: tuple[float, float] = (80.0, 300.0)
    gen_fraction: float = 0.3
    load_fraction: float = 0.6
    n_wind: int = 1
    peak_load_range: tuple[float, float] = (20.0, 120.0)
    cost_range: tuple[float, float] = (10.0, 80.0)


def random_case(seed: int, config: SyntheticConfig | None = None) -> NetworkCase:
    """A connected case: random spanning tree plus extra parallel-free branches.

    Generation capacity exceeds peak load so the devices-off dispatch is
    feasible without shedding whenever the network allows it.
    """
    cfg = config or SyntheticConfig()
    rng = np.random.default_rng(seed)
    n = cfg.n_bus
    buses = tuple(Bus(str(i + 1), ref=(i == 0)) for i in range(n))
    order = rng.permutation(n)
    edges = set()
    for pos in range(1, n):
        a, b = int(order[pos]), int(order[rng.integers(pos)])
        edges.add((min(a, b), max(a, b)))
    target = len(edges) + int(round(cfg.extra_branch_ratio * n))
    tries = 0
    while len(edges) < min(target, n * (n - 1) // 2) and tries < 50 * n:
        a, b = sorted(int(v) for v in rng.choice(n, size=2, replace=False))
        edges.add((a, b))
        tries += 1
    branches = tuple(
        Branch(f"L{k + 1}", str(a + 1), str(b + 1), float(rng.uniform(*cfg.x_range)),
               float(rng.uniform(*cfg.s_max_range)))
        for k, (a, b) in enumerate(sorted(edges)))
    n_load = max(1, int(round(cfg.load_fraction * n)))
    load_buses = sorted(int(v) for v in rng.choice(n, size=n_load, replace=False))
    loads = tuple(Load(f"D{i + 1}", str(b + 1), float(rng.uniform(*cfg.peak_load_range)))
                  for i, b in enumerate(load_buses))
    total = sum(d.p_peak for d in loads)
    n_gen = max(1, int(round(cfg.gen_fraction * n)))
    gen_buses = sorted(int(v) for v in rng.choice(n, size=n_gen, replace=False))
    cap = 1.5 * total / n_gen + 10.0
    gens = tuple(Generator(f"G{i + 1}", str(b + 1), float(rng.uniform(*cfg.cost_range)), 0.0, cap)
                 for i, b in enumerate(gen_buses))
    wind_buses = rng.choice(n, size=min(cfg.n_wind, n), replace=False)
    farms = tuple(WindFarm(f"W{i + 1}", str(int(b) + 1), float(rng.uniform(0.2, 0.6) * total))
                  for i, b in enumerate(wind_buses))
    return NetworkCase(buses, branches, gens, loads, farms, 100.0, f"random_{seed}")


def balanced_injections(case: NetworkCase, rng: np.random.Generator, scale: float = 100.0):
    p = rng.normal(0.0, scale, case.n_bus)
    return p - p.mean()
