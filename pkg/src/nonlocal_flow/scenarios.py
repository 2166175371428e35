"""Frozen regression scenarios shipped with the package (two graphs, two
interval samples, two box samples)."""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cache
from importlib import resources

import numpy as np

from .energy import Dirichlet, EnergySpec, Neumann, PowerRobin
from .flow import FlowConfig
from .kernel import KernelMatrix
from .space import DiscreteSpace, load_graph, sample_euclidean


def data_path(name: str):
    return resources.files(__package__).joinpath("data", name)


def build_space(desc: dict, p: float, base=None):
    """Space and kernel from a ``{"graph": file}`` or Euclidean-sample description."""
    if "graph" in desc:
        path = desc["graph"]
        src = base.joinpath(path) if base is not None and not str(path).startswith("/") else path
        with open(src) as fh:
            return load_graph(fh, desc.get("vertex_weights"))
    return sample_euclidean(desc["omega"], desc["hat"], desc["grid"], desc["theta"], p,
                            desc.get("rule", "coupled"))


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    space: DiscreteSpace
    kernel: KernelMatrix
    p: float
    robin: dict
    tau: float
    n_steps: int
    trials: int
    seed: int
    theta: float | None = None

    @property
    def dimension(self) -> int:
        c = self.space.coords
        return 1 if c is None else int(c.shape[1])

    def spec(self, potential=None) -> EnergySpec:
        return EnergySpec(self.space, self.kernel, self.p, potential or Neumann())

    def robin_spec(self) -> EnergySpec:
        """Power-Robin term with the scenario's ``kappa`` on the exterior."""
        kappa = np.where(self.space.omega_mask, 0.0, float(self.robin["kappa"]))
        return self.spec(PowerRobin(kappa, float(self.robin.get("q", 2.0))))

    def dirichlet_spec(self) -> EnergySpec:
        return self.spec(Dirichlet(~self.space.omega_mask))

    def flow_config(self, **kw) -> FlowConfig:
        return FlowConfig(kw.pop("tau", self.tau), kw.pop("n_steps", self.n_steps), **kw)

    def initial_state(self, rng=None) -> np.ndarray:
        rng = rng or np.random.default_rng(self.seed)
        return rng.normal(size=self.space.n_omega)


@cache
def regression_set() -> tuple[Scenario, ...]:
    doc = json.loads(data_path("regression.json").read_text())
    out = []
    for s in doc["scenarios"]:
        space, kernel = build_space(s["space"], s["p"], resources.files(__package__).joinpath("data"))
        out.append(Scenario(s["name"], space, kernel, float(s["p"]), s["robin"], float(s["tau"]),
                            int(s["n_steps"]), int(s["trials"]), int(s["seed"]),
                            s["space"].get("theta")))
    return tuple(out)
