"""Command-line runner: scenario files in, CSV/JSON datasets out.

Exit status: 0 ok, 1 file system error, 2 invalid scenario or parameters,
3 equilibrium iteration did not converge, 4 numerical blow-up.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import platform
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .broker_ode import BlowUpError, net_speed_coefficients, solve_backward
from .equilibrium import (NonConvergence, ValueCache, attach_surfaces, nash_iterate,
                          unilateral_deviation_gain)
from .informed import solve_informed
from .params import MarketParams, ParameterError, TimeGrid
from .robustness import misspecified_ensemble
from .scenario import Scenario, load_scenario
from .simulator import PathFailure, monte_carlo
from .statskit import compare_scenarios

EXIT_OK, EXIT_IO, EXIT_VALIDATION, EXIT_NONCONVERGENCE, EXIT_BLOWUP = 0, 1, 2, 3, 4
COMMANDS = ("solve", "simulate", "equilibrium", "pareto", "robustness", "tables", "all")
MANIFEST_VERSION = 1


def fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _atomic_write(path: Path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


class Writer:
    """Writes output files atomically and remembers their hashes."""

    def __init__(self, out: Path):
        self.out = Path(out)
        self.files: dict[str, str] = {}

    def text(self, name: str, content: str):
        data = content.encode()
        _atomic_write(self.out / name, data)
        self.files[name] = hashlib.sha256(data).hexdigest()

    def csv(self, name: str, header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
        self.text(name, buf.getvalue())

    def json(self, name: str, obj):
        self.text(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _versions() -> dict:
    import numba
    import scipy
    return {"liquidity_game": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "python": platform.python_version()}


def write_manifest(w: Writer, scn: Scenario, command: str):
    grid = scn.kappa_grid
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "scenario_name": scn.name,
        "scenario_sha256": scn.digest(),
        "seed": int(scn.simulation.get("seed", 0)),
        "n_steps": scn.params.n_steps,
        "kappa_grid": grid,
        "versions": _versions(),
        "files": dict(sorted(w.files.items())),
        "scenario": scn.to_dict(),
    }
    w.json("manifest.json", manifest)


# --- commands ---------------------------------------------------------------

class _Solved:
    def __init__(self, p: MarketParams, method: str):
        self.p = p
        self.grid = TimeGrid.from_params(p)
        self.informed = solve_informed(p, self.grid)
        self.coeffs = solve_backward(p, self.informed, self.grid, method=method)
        self.net = net_speed_coefficients(self.coeffs, self.informed, p, 0)


def cmd_solve(scn: Scenario, w: Writer, solved: _Solved | None = None) -> _Solved:
    solved = solved or _Solved(scn.params, scn.ode_method)
    for name, obj in (("informed_solution.csv", solved.informed), ("broker_coefficients.csv", solved.coeffs),
                      ("net_speed_coefficients.csv", solved.net)):
        header, data = obj.to_csv_rows()
        w.csv(name, header, data)
    return solved


def cmd_simulate(scn: Scenario, w: Writer, solved: _Solved | None = None):
    solved = solved or _Solved(scn.params, scn.ode_method)
    stats = monte_carlo(solved.p, solved.informed, solved.coeffs, scn.sim_config(), net=solved.net,
                        n_store=scn.n_store)
    header, values = stats.summary_row()
    w.csv("ensemble_stats.csv", header, [values])
    for rec in stats.paths:
        h, data = rec.to_csv_rows()
        w.csv(f"path_{rec.path_index}.csv", h, data)
    return stats


def _trace_rows(trace):
    return [[r["iteration"], r["kappa1"], r["kappa2"], r["kappa2_target"]] for r in trace]


def _write_trace(w: Writer, trace):
    w.csv("equilibrium_trace.csv", ["iteration", "kappa1", "kappa2", "kappa2_target"], _trace_rows(trace))


def _equilibrium(scn: Scenario, w: Writer, p: MarketParams, grid, cache: ValueCache):
    try:
        res = nash_iterate(grid, p, cache)
    except NonConvergence as exc:
        _write_trace(w, exc.trace)
        raise
    _write_trace(w, res.trace)
    return res


def cmd_equilibrium(scn: Scenario, w: Writer):
    grid = scn.grid()
    cache = ValueCache(scn.params, method=scn.ode_method)
    res = _equilibrium(scn, w, scn.params, grid, cache)
    attach_surfaces(res, scn.params, cache)
    gain = unilateral_deviation_gain(res, scn.params, cache)
    K1, K2 = np.meshgrid(grid.k1, grid.k2, indexing="ij")
    w.csv("value_surfaces.csv", ["kappa1", "kappa2", "V1", "V2", "VI"],
          np.column_stack([K1.ravel(), K2.ravel(), res.V1.ravel(), res.V2.ravel(), res.VI.ravel()]))
    rows = [[1, k2, b] for k2, b in zip(grid.k2, res.br1)] + [[2, k1, b] for k1, b in zip(grid.k1, res.br2)]
    w.csv("best_response.csv", ["broker", "kappa_other", "kappa_best"], rows)
    w.json("equilibrium_summary.json", {
        "kappa_star": list(res.kappa_star),
        "V1": res.values[0], "V2": res.values[1], "VI": res.values[2],
        "iterations": res.iterations,
        "polish_steps": res.info["polish_steps"],
        "tolerance": res.info["tolerance"],
        "grid_spacing": grid.spacing,
        "deviation_gain": list(gain),
        "pareto_cells": int(res.pareto.sum()),
    })
    k1s, k2s = res.kappa_star
    print(f"kappa1*={k1s:.6g} kappa2*={k2s:.6g} V1={res.values[0]:.10g} V2={res.values[1]:.10g} "
          f"VI={res.values[2]:.10g}")
    return res


def cmd_pareto(scn: Scenario, w: Writer, res=None):
    res = res or cmd_equilibrium(scn, w)
    grid = res.grid
    K1, K2 = np.meshgrid(grid.k1, grid.k2, indexing="ij")
    w.csv("pareto_mask.csv", ["kappa1", "kappa2", "V1_gain", "V2_gain", "pareto"],
          zip(K1.ravel(), K2.ravel(), (res.V1 - res.values[0]).ravel(), (res.V2 - res.values[1]).ravel(),
              res.pareto.ravel().astype(int)))
    return res


def cmd_robustness(scn: Scenario, w: Writer, solved: _Solved | None = None):
    solved = solved or _Solved(scn.params, scn.ode_method)
    result = misspecified_ensemble(scn.robustness_scenario(), solved.p, solved.informed, solved.coeffs)
    header, data = result.to_csv_rows(broker=0)
    w.csv("robustness.csv", header, data)
    return result


def cmd_tables(scn: Scenario, w: Writer):
    stats, eq_rows = [], []
    for label, p, grid in scn.variants():
        if grid is not None:
            cache = ValueCache(p, method=scn.ode_method)
            try:
                res = nash_iterate(grid, p, cache)
            except NonConvergence as exc:
                _write_trace(w, exc.trace)
                raise
            p = p.replace(kappa=np.array(res.kappa_star))
            values = res.values
        else:
            values = (np.nan, np.nan, np.nan)
        solved = _Solved(p, scn.ode_method)
        st = monte_carlo(p, solved.informed, solved.coeffs, scn.sim_config(), net=solved.net)
        stats.append(st)
        eq_rows.append([label, p.kappa[0], p.kappa[1], *values])
        header, summary = st.summary_row()
        eq_rows[-1] += summary
    w.csv("tables_scenarios.csv", ["label", "kappa1", "kappa2", "V1", "V2", "VI"] + header, eq_rows)
    labels = [r[0] for r in eq_rows]
    cmp = compare_scenarios(stats[0], stats[1], labels[0], labels[1])
    w.text("comparison.md", cmp.to_markdown())
    w.text("comparison.csv", cmp.to_csv())
    return cmp


def cmd_all(scn: Scenario, w: Writer):
    solved = cmd_solve(scn, w)
    cmd_simulate(scn, w, solved)
    if scn.kappa_grid is not None:
        cmd_pareto(scn, w)
    if scn.robustness is not None:
        cmd_robustness(scn, w, solved)
    if scn.tables is not None:
        cmd_tables(scn, w)


def _dispatch(command: str, scn: Scenario, w: Writer):
    {"solve": cmd_solve, "simulate": cmd_simulate, "equilibrium": cmd_equilibrium, "pareto": cmd_pareto,
     "robustness": cmd_robustness, "tables": cmd_tables, "all": cmd_all}[command](scn, w)


# --- entry point ------------------------------------------------------------

def effective_scenario(args) -> Scenario:
    """Scenario after command-line overrides; this is what the manifest records."""
    scn = load_scenario(args.scenario)
    data = scn.to_dict()
    if args.seed is not None:
        data["simulation"]["seed"] = args.seed
    if args.paths is not None:
        data["simulation"]["n_paths"] = args.paths
    if args.steps is not None:
        data["params"]["n_steps"] = args.steps
    if args.rk4:
        data["ode_method"] = "rk4"
    return Scenario.from_dict(data)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="liquidity-game", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--scenario", required=True, help="scenario JSON (or a manifest.json from an earlier run)")
    parser.add_argument("--out", default=None, help="output directory (default: out/<scenario name>)")
    parser.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    parser.add_argument("--steps", type=int, default=None, help="override the number of time steps")
    parser.add_argument("--paths", type=int, default=None, help="override the number of Monte Carlo paths")
    parser.add_argument("--rk4", action="store_true", help="integrate the coefficient ODEs with RK4")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scn = effective_scenario(args)
        out = Path(args.out) if args.out else Path("out") / scn.name
        w = Writer(out)
        try:
            _dispatch(args.command, scn, w)
        finally:
            if w.files:
                write_manifest(w, scn, args.command)
    except NonConvergence as exc:
        print(f"error: {exc} (trace in equilibrium_trace.csv)", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (BlowUpError, PathFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except ParameterError as exc:
        print("error: invalid scenario", file=sys.stderr)
        for v in exc.violations:
            print(f"  - {v}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValueError, KeyError, TypeError) as exc:
        print(f"error: invalid scenario: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
