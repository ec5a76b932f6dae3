"""JSON scenario files tying parameters to simulation, grid and sweep settings.

A scenario file looks like::

    {
      "name": "fig1",
      "params": {... MarketParams fields ...},
      "simulation": {"n_paths": 4000, "seed": 7, "n_store": 3},
      "kappa_grid": {"kappa1": [0.3, 0.75, 19], "kappa2": [0.3, 0.75, 19]},
      "robustness": {"sweep": [-2, -1, 0, 1, 2], "qI0_estimate": 0},
      "tables": {"variants": [{"label": "phi1=2", "overrides": {"phi": [2, 10]}}, ...]},
      "ode_method": "euler"
    }

Only ``name`` and ``params`` are required. A table variant may carry its own
``kappa_grid``; with ``"solve_equilibrium": false`` in the tables section the
variants are simulated at their own ``kappa`` instead of at equilibrium. A run manifest can be loaded in
place of a scenario file; its embedded effective scenario is used.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .equilibrium import KappaGrid
from .params import MarketParams, ParameterError, validate_params
from .robustness import DEFAULT_SWEEP, RobustnessScenario
from .simulator import SimulationConfig

SECTIONS = {"name", "params", "simulation", "kappa_grid", "robustness", "tables", "description", "ode_method"}
SIMULATION_KEYS = {"n_paths", "seed", "n_store", "chunk_size"}
GRID_KEYS = {"kappa1", "kappa2", "gamma_lr", "tol", "max_iters", "kappa2_init"}
ROBUSTNESS_KEYS = {"sweep", "qI0_estimate"}


def _check_keys(section: str, data: dict, allowed: set):
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ParameterError([f"unknown key '{k}' in {section}" for k in unknown])


@dataclass
class Scenario:
    name: str
    params: MarketParams
    simulation: dict = field(default_factory=dict)
    kappa_grid: dict | None = None
    robustness: dict | None = None
    tables: dict | None = None
    description: str = ""
    ode_method: str = "euler"

    def __post_init__(self):
        if self.ode_method not in ("euler", "rk4"):
            raise ParameterError([f"ode_method must be 'euler' or 'rk4', got {self.ode_method!r}"])

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Scenario":
        if "manifest_version" in data:
            data = data["scenario"]
        _check_keys("scenario", data, SECTIONS)
        for required in ("name", "params"):
            if required not in data:
                raise ParameterError([f"scenario is missing '{required}'"])
        _check_keys("simulation", data.get("simulation", {}), SIMULATION_KEYS)
        if data.get("kappa_grid") is not None:
            _check_keys("kappa_grid", data["kappa_grid"], GRID_KEYS)
        if data.get("robustness") is not None:
            _check_keys("robustness", data["robustness"], ROBUSTNESS_KEYS)
        return cls(
            name=str(data["name"]),
            params=validate_params(MarketParams.from_dict(data["params"])),
            simulation=dict(data.get("simulation", {})),
            kappa_grid=data.get("kappa_grid"),
            robustness=data.get("robustness"),
            tables=data.get("tables"),
            description=str(data.get("description", "")),
            ode_method=str(data.get("ode_method", "euler")),
        )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"name": self.name, "params": self.params.to_dict(), "simulation": self.simulation}
        for key in ("kappa_grid", "robustness", "tables"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        if self.description:
            out["description"] = self.description
        out["ode_method"] = self.ode_method
        return out

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def sim_config(self) -> SimulationConfig:
        s = self.simulation
        return SimulationConfig(n_paths=int(s.get("n_paths", 1000)), seed=int(s.get("seed", 0)),
                                chunk_size=int(s.get("chunk_size", 500)))

    @property
    def n_store(self) -> int:
        return int(self.simulation.get("n_store", 0))

    def grid(self, section: dict | None = None) -> KappaGrid:
        section = self.kappa_grid if section is None else section
        if section is None:
            raise ParameterError([f"scenario '{self.name}' has no kappa_grid section"])
        _check_keys("kappa_grid", section, GRID_KEYS)
        g = dict(section)
        g["kappa1"] = tuple(g["kappa1"])
        g["kappa2"] = tuple(g["kappa2"])
        try:
            return KappaGrid(**g)
        except ValueError as exc:
            raise ParameterError([str(exc)]) from None

    def robustness_scenario(self) -> RobustnessScenario:
        r = self.robustness or {}
        return RobustnessScenario(sweep=tuple(float(v) for v in r.get("sweep", DEFAULT_SWEEP)),
                                  qI0_estimate=float(r.get("qI0_estimate", 0.0)), config=self.sim_config())

    @property
    def solve_equilibrium(self) -> bool:
        return bool((self.tables or {}).get("solve_equilibrium", True))

    def variants(self) -> list[tuple[str, MarketParams, KappaGrid | None]]:
        """(label, params, grid) for each entry of the tables section.

        The grid is None when the tables section skips the equilibrium step.
        """
        if not self.tables or not self.tables.get("variants"):
            raise ParameterError([f"scenario '{self.name}' has no tables.variants"])
        _check_keys("tables", self.tables, {"variants", "solve_equilibrium"})
        if len(self.tables["variants"]) != 2:
            raise ParameterError(["tables.variants must hold exactly two scenarios to compare"])
        out = []
        base = self.params.to_dict()
        for v in self.tables["variants"]:
            _check_keys("tables variant", v, {"label", "overrides", "kappa_grid"})
            merged = dict(base)
            merged.update(v.get("overrides", {}))
            grid = self.grid(v.get("kappa_grid")) if self.solve_equilibrium else None
            out.append((str(v["label"]), validate_params(MarketParams.from_dict(merged)), grid))
        return out


def load_scenario(path: str | Path) -> Scenario:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParameterError([f"{path}: invalid JSON ({exc})"]) from None
    return Scenario.from_dict(data)
