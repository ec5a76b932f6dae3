"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import json
import time
from functools import lru_cache

import numpy as np
from scipy.integrate import solve_ivp

from liquidity_game.broker_ode import FAMILIES, pde_residual, solve_backward, terminal_conditions
from liquidity_game.cli import main
from liquidity_game.equilibrium import (ValueCache, attach_surfaces, nash_iterate, unilateral_deviation_gain)
from liquidity_game.informed import solve_informed
from liquidity_game.params import MarketParams, harmonic_kappa
from liquidity_game.robustness import misspecified_ensemble
from liquidity_game.simulator import SimulationConfig, monte_carlo
from liquidity_game.statskit import compare_scenarios

from conftest import SCENARIOS, Solved, params, scenario


def report(capsys, k, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {k:>2}: {'PASS' if ok else 'FAIL'} | {detail}")
    assert ok, detail


@lru_cache(maxsize=None)
def _solve_equilibrium(grid_json, params_json):
    p = MarketParams.from_dict(json.loads(params_json))
    grid = scenario_grid(json.loads(grid_json))
    cache = ValueCache(p)
    return nash_iterate(grid, p, cache), p, cache


def scenario_grid(section):
    return scenario("fig5_phi").grid(section)


def equilibrium(name, **overrides):
    """Equilibrium of a scenario with some parameters replaced; shared across criteria."""
    scn = scenario(name)
    p = scn.params.replace(**{k: list(v) for k, v in overrides.items()}) if overrides else scn.params
    return _solve_equilibrium(json.dumps(scn.kappa_grid, sort_keys=True), json.dumps(p.to_dict(), sort_keys=True))


def _oracle_h2_m(p, t):
    kap = harmonic_kappa(p.kappa)
    Phi = 0.5 * p.psi_I * p.sigma ** 2 + p.phi_I

    def rhs(_, y):
        h2, m = y
        return [Phi - h2 ** 2 / kap, p.theta * m - 1.0 - m * h2 / kap]

    sol = solve_ivp(rhs, (p.T, 0.0), [-p.a_I, 0.0], t_eval=t[::-1], method="DOP853", rtol=1e-12, atol=1e-14)
    return sol.y[0, ::-1], sol.y[1, ::-1]


def test_criterion_01_closed_form_oracle(capsys):
    t0 = time.perf_counter()
    errs = []
    for name in ("fig1_paths", "fig5_phi"):
        p = params(name)
        sol = solve_informed(p)
        h2, m = _oracle_h2_m(p, sol.grid.t)
        errs.append(max(np.abs(sol.h2 - h2).max(), np.abs(sol.m_I - m).max()))
    dt = time.perf_counter() - t0
    ok = max(errs) <= 1e-6 and dt < 1.0
    report(capsys, 1, ok, f"max |closed form - ODE| = {max(errs):.2e} (tol 1e-6), runtime {dt:.2f}s (< 1s)")


def test_criterion_02_terminal_identities(capsys):
    bad = []
    for name in ("fig1_paths", "fig5_phi", "fig3_equilibrium"):
        p = params(name)
        sol = solve_informed(p)
        if not (sol.m_I[-1] == 0.0 and sol.h2[-1] == -p.a_I):
            bad.append(f"{name}: informed")
        co = solve_backward(p.replace(n_steps=5000))
        fam = co.at(p.n_steps)
        for fname in FAMILIES:
            expect = np.zeros_like(fam[fname])
            if fname == "n":
                for i in range(p.n_brokers):
                    expect[i, i, i] = -p.a[i]
            if not np.array_equal(fam[fname], expect) or not np.array_equal(terminal_conditions(p)[fname], expect):
                bad.append(f"{name}: {fname}")
    report(capsys, 2, not bad, "all terminal coefficients exact" if not bad else f"mismatch in {bad}")


def test_criterion_03_pde_residual_refinement(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    ratios = {}
    for name in ("fig5_phi", "fig1_paths"):
        p = params(name)
        nodes = rng.integers(4, 5000 - 4, 200)
        z = rng.uniform(-1, 1, (200, 6))
        res = []
        for n in (5000, 10000):
            pn = p.replace(n_steps=n)
            sol = solve_informed(pn)
            co = solve_backward(pn, sol)
            r = np.empty(200)
            scale = n // 5000
            for j, k in enumerate(nodes):
                r[j] = np.abs(pde_residual(int(k) * scale, z[j:j + 1, 0], z[j:j + 1, 1], z[j:j + 1, 2:4],
                                           z[j:j + 1, 4:6], co, pn, sol)).max()
            res.append(np.sqrt(np.mean(r ** 2)))
        ratios[name] = res[0] / res[1]
    dt = time.perf_counter() - t0
    ok = min(ratios.values()) >= 1.8 and dt < 30
    detail = ", ".join(f"{k} ratio {v:.3f}" for k, v in ratios.items())
    report(capsys, 3, ok, f"RMS residual ratio 5000->10000 steps: {detail} (>= 1.8), runtime {dt:.1f}s (< 30s)")


def test_criterion_04_proportional_flow(capsys, fig1_solved):
    s = fig1_solved
    st = monte_carlo(s.p, s.informed, s.coeffs, SimulationConfig(n_paths=100, seed=4, store_paths=True))
    worst, half = 0.0, 0.0
    for rec in st.paths:
        kw = rec.omega * s.p.kappa[None]
        worst = max(worst, np.abs(kw[:, 0] - kw[:, 1]).max() / np.abs(kw).max())
        half = max(half, np.abs(rec.omega[:, 1] - 0.5 * rec.omega[:, 0]).max() / np.abs(rec.omega).max())
    ok = worst <= 1e-12 and half <= 1e-12
    report(capsys, 4, ok, f"max rel |k1 w1 - k2 w2| = {worst:.1e}, max rel |w2 - w1/2| = {half:.1e} over 100 paths")


def test_criterion_05_analytic_vs_monte_carlo(capsys, fig1_solved):
    s = fig1_solved
    t0 = time.perf_counter()
    st = monte_carlo(s.p, s.informed, s.coeffs, SimulationConfig(n_paths=4000, seed=1))
    dt = time.perf_counter() - t0
    H = s.coeffs.f[0]
    z = np.abs(st.criterion_mean - H) / st.criterion_stderr
    HI = s.informed.f0[0]
    zI = abs(st.informed_mean - HI) / st.informed_stderr
    ok = bool(np.all(z <= 3) and zI <= 3 and dt < 120)
    report(capsys, 5, ok,
           f"brokers MC {np.round(st.criterion_mean, 4)} vs h(0) {np.round(H, 4)} ({np.round(z, 2)} se); "
           f"informed MC {st.informed_mean:.4f} vs {HI:.4f} ({zI:.2f} se, discrepancy {st.informed_mean - HI:+.4f}); "
           f"runtime {dt:.0f}s")


def test_criterion_06_robustness_shape(capsys):
    scn = scenario("fig2_robustness")
    s = Solved(scn.params)
    res = misspecified_ensemble(scn.robustness_scenario(), s.p, s.informed, s.coeffs)
    sweep = res.sweep
    zero = int(np.flatnonzero(sweep == 0.0)[0])
    msgs, ok = [], True
    for label, gap, mean, se in (("H", res.gap_H, res.gap_H_mean[:, 0], res.gap_H_stderr[:, 0]),
                                 ("PnL", res.gap_PnL, res.gap_PnL_mean[:, 0], res.gap_PnL_stderr[:, 0])):
        nonneg = bool(np.all(mean >= -3 * se))
        exact = not np.any(gap[zero])
        left = bool(np.all(np.diff(mean[:zero + 1]) < 0))
        right = bool(np.all(np.diff(mean[zero:]) > 0))
        ok &= nonneg and exact and left and right
        msgs.append(f"gap_{label}: >=0 {nonneg}, zero at 0 {exact}, rising outward {left and right} "
                    f"(ends {mean[0]:.3f}/{mean[-1]:.3f})")
    report(capsys, 6, ok, "; ".join(msgs))


def test_criterion_07_equilibrium_structure(capsys):
    res, p, cache = equilibrium("fig3_equilibrium")
    attach_surfaces(res, p, cache)
    g = res.grid
    second = np.diff(res.V1, 2, axis=0).max()
    incr = np.diff(res.V1, axis=1).min()
    br_mono = bool(np.all(np.diff(res.br1) >= 0))
    gain = unilateral_deviation_gain(res, p, cache)
    sym = abs(res.kappa_star[0] - res.kappa_star[1]) <= g.spacing + 1e-12
    ok = second <= 1e-9 and incr >= -1e-9 and br_mono and max(gain) <= 0 and sym
    report(capsys, 7, ok, f"max d2V1/dk1^2 {second:.1e}, min dV1/dk2 {incr:.1e}, br1 nondecreasing {br_mono}, "
                          f"deviation gains {gain}, kappa* {res.kappa_star}")


def test_criterion_08_pareto_region(capsys):
    res, p, cache = equilibrium("fig3_equilibrium")
    attach_surfaces(res, p, cache)
    n = int(res.pareto.sum())
    report(capsys, 8, n > 0, f"{n} grid cells where both brokers beat kappa* = {res.kappa_star}")


def test_criterion_09_sensitivity_directions(capsys):
    t0 = time.perf_counter()
    phi1 = [equilibrium("fig5_phi", phi=(v, 10.0))[0].kappa_star[0] for v in range(2, 21, 2)]
    hi = [equilibrium("fig7_phi10", a=(v, 20.0))[0].kappa_star[0] for v in range(2, 21, 2)]
    lo = [equilibrium("fig7_phi1", a=(v, 20.0))[0].kappa_star[0] for v in range(2, 21, 2)]
    dt = time.perf_counter() - t0
    c1 = bool(np.all(np.diff(phi1) <= 0))
    c2 = bool(np.all(np.diff(hi) >= 0))
    c3 = bool(np.all(np.diff(lo) <= 0))
    ok = c1 and c2 and c3 and dt < 1200
    report(capsys, 9, ok, f"k1*(phi1) {phi1} nonincreasing {c1}; k1*(a1 | phi=10) {hi} nondecreasing {c2}; "
                          f"k1*(a1 | phi=1) {lo} nonincreasing {c3}; runtime {dt:.0f}s")


TABLE1 = {"Z_I": (0.16, 0.78), "Q_bar": (0.17, 0.02), "Y_alpha": (1.08, 0.35)}
TABLE1_SIGNS = {"Z_I": -1, "Q_bar": 1, "Y_alpha": 1}
TABLE3 = {1: {"Z_I": 11.17, "Q_bar": -11.24, "Y_alpha": -7.33, "Y_I": -34.36},
          10: {"Z_I": -6.48, "Q_bar": -5.99, "Y_alpha": -0.47, "Y_I": -56.23}}


def _table_comparison(name):
    scn = scenario(name)
    stats = []
    for label, p, grid in scn.variants():
        overrides = {k: tuple(float(x) for x in getattr(p, k)) for k in ("phi", "a")}
        res, p_eq, _ = equilibrium(name, **overrides)
        p_eq = p_eq.replace(kappa=list(res.kappa_star))
        s = Solved(p_eq)
        stats.append(monte_carlo(p_eq, s.informed, s.coeffs, scn.sim_config(), net=s.net))
    return compare_scenarios(stats[0], stats[1])


def test_criterion_10_table_reproduction(capsys):
    failures, lines = [], []
    cmp = _table_comparison("table1_phi")
    for key, (a, b) in TABLE1.items():
        r = cmp.rows[key]
        for got, want, tag in ((r.mean_a, a, "phi1=2"), (r.mean_b, b, "phi1=20")):
            if abs(got - want) > 0.25 * want:
                failures.append(f"T1 {key} {tag} mean {got:.3f} vs {want}")
        if np.sign(r.t) != TABLE1_SIGNS[key]:
            failures.append(f"T1 {key} t sign {r.t:+.1f}")
    for key, r in cmp.rows.items():
        if abs(r.t) <= 2:
            failures.append(f"T1 {key} |t| = {abs(r.t):.2f}")
    lines.append("T1 " + ", ".join(f"{k} {r.mean_a:.3f}->{r.mean_b:.3f} (t {r.t:+.1f})" for k, r in cmp.rows.items()))
    for phi, name in ((1, "table3_phi1"), (10, "table3_phi10")):
        cmp = _table_comparison(name)
        got = {k: 100 * cmp.pct_change(k) for k in cmp.rows}
        for key, want in TABLE3[phi].items():
            if np.sign(got[key]) != np.sign(want) or abs(got[key] - want) > 0.5 * abs(want):
                failures.append(f"T3 phi={phi} {key} {got[key]:+.2f}% vs {want:+.2f}% (t {cmp.rows[key].t:+.2f})")
        lines.append(f"T3 phi={phi} " + ", ".join(f"{k} {v:+.2f}%" for k, v in got.items()))
    detail = "; ".join(lines) + ("" if not failures else " || misses: " + "; ".join(failures))
    report(capsys, 10, not failures, detail)


def _blobs(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_criterion_11_determinism(capsys, tmp_path):
    runs = [
        ("solve", "fig1_paths.json", []),
        ("simulate", "fig1_paths.json", ["--paths", "50"]),
        ("equilibrium", "fig3_equilibrium.json", []),
        ("pareto", "fig3_equilibrium.json", []),
        ("robustness", "fig2_robustness.json", ["--paths", "20"]),
        ("tables", "table1_phi.json", ["--paths", "50"]),
        ("all", "fig5_phi.json", ["--paths", "20", "--steps", "1000"]),
    ]
    bad = []
    for cmd, scn, extra in runs:
        outs = []
        for rep in ("a", "b"):
            out = tmp_path / f"{cmd}_{rep}"
            code = main([cmd, "--scenario", str(SCENARIOS / scn), "--out", str(out), "--seed", "17"] + extra)
            if code != 0:
                bad.append(f"{cmd} exit {code}")
            outs.append(out)
        rerun = tmp_path / f"{cmd}_manifest"
        main([cmd, "--scenario", str(outs[0] / "manifest.json"), "--out", str(rerun)])
        if not (_blobs(outs[0]) == _blobs(outs[1]) == _blobs(rerun)):
            bad.append(cmd)
    report(capsys, 11, not bad, "byte-identical reruns and manifest reruns for every command"
           if not bad else f"differences in {bad}")
