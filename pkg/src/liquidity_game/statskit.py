"""Welch two-sample comparisons of ensemble characteristics."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy import stats

CHARACTERISTICS = ("Z_I", "Q_bar", "Y_alpha", "Y_I")
LABELS = {"Z_I": "Z^I", "Q_bar": "Q_bar", "Y_alpha": "Y_tot^alpha", "Y_I": "Y_tot^I"}


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    df: float
    mean_a: float
    mean_b: float
    std_a: float
    std_b: float
    degenerate: bool = False


def two_sample_t(a, b) -> TTestResult:
    """Welch t statistic for mean(a) - mean(b).

    Degrees of freedom follow Welch-Satterthwaite; the p-value is two-sided.
    When both samples have zero variance the statistic is reported as
    +-inf with p = 0 (or 0 with p = 1 if the means agree) and ``degenerate``
    is set.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least two observations")
    ma, mb = a.mean(), b.mean()
    sa, sb = a.std(ddof=1), b.std(ddof=1)
    va, vb = sa ** 2 / a.size, sb ** 2 / b.size
    se2 = va + vb
    if se2 == 0.0:
        diff = ma - mb
        t = 0.0 if diff == 0 else float(np.copysign(np.inf, diff))
        return TTestResult(t, 1.0 if diff == 0 else 0.0, np.nan, ma, mb, sa, sb, degenerate=True)
    t = (ma - mb) / np.sqrt(se2)
    df = se2 ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1))
    p = 2.0 * stats.t.sf(abs(t), df)
    return TTestResult(float(t), float(p), float(df), float(ma), float(mb), float(sa), float(sb))


@dataclass(frozen=True)
class ScenarioComparison:
    """Per-characteristic t-tests between two ensembles.

    ``pct_change`` is (mean_b - mean_a) / mean_a.
    """

    rows: dict
    label_a: str = "a"
    label_b: str = "b"

    def pct_change(self, name: str) -> float:
        r = self.rows[name]
        return (r.mean_b - r.mean_a) / r.mean_a

    def to_markdown(self, digits: int = 3) -> str:
        f = f"{{:.{digits}f}}"
        lines = [f"| characteristic | {self.label_a} mean (std) | {self.label_b} mean (std) | change | t-stat |",
                 "|---|---|---|---|---|"]
        for name, r in self.rows.items():
            lines.append(
                f"| {LABELS.get(name, name)} | {f.format(r.mean_a)} ({f.format(r.std_a)}) "
                f"| {f.format(r.mean_b)} ({f.format(r.std_b)}) "
                f"| {100 * self.pct_change(name):+.2f}% | {r.t:.2f} |"
            )
        return "\n".join(lines) + "\n"

    def csv_rows(self):
        header = ["characteristic", "mean_a", "std_a", "mean_b", "std_b", "pct_change", "t", "p", "df"]
        rows = [[name, r.mean_a, r.std_a, r.mean_b, r.std_b, self.pct_change(name), r.t, r.p, r.df]
                for name, r in self.rows.items()]
        return header, rows

    def to_csv(self) -> str:
        header, rows = self.csv_rows()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([row[0]] + [format(v, ".17g") for v in row[1:]])
        return buf.getvalue()


def compare_scenarios(stats_a, stats_b, label_a: str = "a", label_b: str = "b") -> ScenarioComparison:
    """Compare two ensembles on every shared characteristic.

    Accepts :class:`~liquidity_game.simulator.EnsembleStats` or plain
    mappings from characteristic name to per-path samples. The t statistic
    is mean(a) - mean(b), so a characteristic that rises from a to b gets a
    negative t.
    """
    get = lambda s: s.characteristics() if hasattr(s, "characteristics") else dict(s)
    ca, cb = get(stats_a), get(stats_b)
    names = [n for n in CHARACTERISTICS if n in ca and n in cb]
    names += [n for n in ca if n in cb and n not in names]
    return ScenarioComparison({n: two_sample_t(ca[n], cb[n]) for n in names}, label_a, label_b)
