"""Table and figure-data emission from the closed forms in ``regime``.

Values stay exact (``Fraction``) inside each row; the ``display`` helpers
round only for CSV output.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal, localcontext
from fractions import Fraction
from pathlib import Path
from typing import Optional

from .core import DomainError
from .regime import (
    RegimeName,
    baiting_threshold,
    branch_threshold,
    deposit_min,
    regime_bounds,
    wc_limit,
)


def _to_decimal(x: Fraction) -> Decimal:
    with localcontext() as ctx:
        ctx.prec = 40
        return Decimal(x.numerator) / Decimal(x.denominator)


def round_sig(x: Fraction, digits: int = 2) -> str:
    """Round to ``digits`` significant figures, half-up, no exponent."""
    if x == 0:
        return "0"
    d = _to_decimal(x)
    exp = d.adjusted() - digits + 1
    q = d.quantize(Decimal(1).scaleb(exp), rounding=ROUND_HALF_UP)
    if q.adjusted() > d.adjusted():  # 0.00995 -> 0.010 style carry
        q = d.quantize(Decimal(1).scaleb(exp + 1), rounding=ROUND_HALF_UP)
    return format(q, "f")


def round_places(x: Fraction, places: int) -> str:
    q = _to_decimal(x).quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP)
    return format(q, "f")


def _cfin_formula(a: Optional[int]) -> str:
    if a is None:
        return "4f+1"
    if a == 2:
        return "3f+1"
    # a*(4f+1) - (5f+1) over a-1, collected in f
    return f"ceil(({4 * a - 5}f+{a - 1})/{a - 1})"


@dataclass
class Table:
    name: str
    header: list[str]
    rows: list[list] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for r in self.rows:
            w.writerow(r)
        return buf.getvalue()

    def column(self, name: str) -> list:
        i = self.header.index(name)
        return [r[i] for r in self.rows]


def threshold_table(f: int) -> Table:
    n, h = 5 * f + 1, 4 * f + 1
    t = Table("table1", ["a", "C_fin(a)", f"f={f}", "Fraction"])
    for a in (2, 3, 4, 5, None):
        c = h if a is None else branch_threshold(n, h, a)
        t.rows.append(["inf" if a is None else a, _cfin_formula(a), c,
                       round_places(Fraction(100 * c, n), 0) + "%"])
    return t


def _deposit_rows(f: int, lo: int, hi: int, a_bar: int, name: str) -> Table:
    t = Table(name, ["C", "k", "m", "d_min", "L/G"])
    for C in range(lo, hi + 1):
        k = C - f
        if k < 1:
            continue
        m = baiting_threshold(k, f, f)
        d = deposit_min(k, m, f, a_bar)
        t.rows.append([C, k, m, round_sig(d), round_sig(100 * d) + "%"])
    return t


def double_spend_table(f: int) -> Table:
    lo, hi = regime_bounds(f)[RegimeName.DOUBLE]
    return _deposit_rows(f, lo, hi, 2, "table2")


def triple_spend_table(f: int) -> Table:
    lo, hi = regime_bounds(f)[RegimeName.TRIPLE]
    return _deposit_rows(f, lo, hi, 3, "table3")


def _max_deposit(f: int, lo: int, hi: int, a_bar: int) -> Optional[Fraction]:
    vals = [deposit_min(C - f, baiting_threshold(C - f, f, f), f, a_bar)
            for C in range(lo, hi + 1) if C - f >= 1]
    return max(vals) if vals else None


def tradeoff_table(f: int) -> Table:
    """Operating points of the k-t tradeoff (t_max = f, t = 1 at k_max)."""
    b = regime_bounds(f)
    t = Table("table4", ["Model", "t_max", "k at t_max", "t at k_max", "k_max"])
    for label, reg in (("5f+1 no-fork", RegimeName.NOFORK),
                       ("5f+1 dbl-spend", RegimeName.DOUBLE),
                       ("5f+1 trpl-spend", RegimeName.TRIPLE)):
        lo, top = b[reg]
        if lo > top:
            continue
        t.rows.append([label, f, top - f, 1, top - 1])
    return t


def regime_table(f: int) -> Table:
    b = regime_bounds(f)
    t = Table("table5", ["Regime", "C", "a_max", "t_max", "k_max", "d_max"])
    spec = [("BFT", RegimeName.BFT, 1, None), ("No-fork", RegimeName.NOFORK, 1, None),
            ("Double-spend", RegimeName.DOUBLE, 2, 2), ("Triple-spend", RegimeName.TRIPLE, 3, 3)]
    for label, reg, a_max, a_bar in spec:
        lo, hi = b[reg]
        if lo > hi:  # range collapses at small f (e.g. no triple-spend at f=1)
            t.rows.append([label, "none", a_max, f, 0, "n/a"])
            continue
        c_txt = f"<={hi}" if reg is RegimeName.BFT else f"{lo}-{hi}"
        dmax = None if a_bar is None else _max_deposit(f, lo, hi, a_bar)
        d = "0" if a_bar is None else ("n/a" if dmax is None else round_sig(100 * dmax) + "%")
        t.rows.append([label, c_txt, a_max, f, max(0, hi - f), d])
    return t


def branch_fraction_curves(a_max: int = 12, f: Optional[int] = None) -> Table:
    """C_fin(a)/n for both quorum models; the large-f limits when ``f`` is
    None, otherwise exact values at that f."""
    t = Table("fig2", ["a", "5f+1", "3f+1"])
    for a in range(2, a_max + 1):
        if f is None:
            five = Fraction(4 * a - 5, 5 * (a - 1))
            three = Fraction(2 * a - 3, 3 * (a - 1))
        else:
            n5, n3 = 5 * f + 1, 3 * f + 1
            five = Fraction(branch_threshold(n5, 4 * f + 1, a), n5)
            three = Fraction(branch_threshold(n3, 2 * f + 1, a), n3)
        t.rows.append([a, round_places(five, 4), round_places(three, 4)])
    return t


def feasibility_region(f: int) -> Table:
    """Largest feasible k for every t in [0, f], per regime, plus the
    boundary lines as fractions of n."""
    n = 5 * f + 1
    b = regime_bounds(f)
    t = Table("fig3", ["t", "t/n", "k_nofork", "k_double", "k_triple",
                       "nofork_line", "double_line", "triple_line",
                       "trap_line", "trap_vc_line"])
    for tt in range(0, f + 1):
        x = Fraction(tt, n)
        lines = [Fraction(3, 5) - x, Fraction(7, 10) - x, Fraction(11, 15) - x,
                 Fraction(1, 2) - x, Fraction(5, 9) - x]
        t.rows.append([tt, round_places(x, 4),
                       max(0, b[RegimeName.NOFORK][1] - tt),
                       max(0, b[RegimeName.DOUBLE][1] - tt),
                       max(0, b[RegimeName.TRIPLE][1] - tt)]
                      + [round_places(v, 4) for v in lines])
    return t


def deposit_curve(f: int, c_lo: Optional[int] = None, c_hi: Optional[int] = None) -> Table:
    """Deposit (percent of G) against C with t = f; empty past the
    winner-consensus limit."""
    c_lo = 3 * f - 2 if c_lo is None else c_lo
    c_hi = wc_limit(f) + 1 if c_hi is None else c_hi
    b = regime_bounds(f)
    t = Table("fig4", ["C", "regime", "d_percent"])
    for C in range(c_lo, c_hi + 1):
        reg = next(r for r, (lo, hi) in b.items() if lo <= C <= hi)
        if reg in (RegimeName.BFT, RegimeName.NOFORK):
            val = "0"
        elif reg is RegimeName.BEYOND_WC:
            val = ""
        else:
            a_bar = 2 if reg is RegimeName.DOUBLE else 3
            k = C - f
            val = round_places(100 * deposit_min(k, baiting_threshold(k, f, f), f, a_bar), 3)
        t.rows.append([C, reg.value, val])
    return t


def emit_tables(f: int) -> dict[str, Table]:
    if f < 1:
        raise DomainError("f must be >= 1")
    return {
        "table1": threshold_table(f),
        "table2": double_spend_table(f),
        "table3": triple_spend_table(f),
        "table4": tradeoff_table(f),
        "table5": regime_table(f),
        "fig2": branch_fraction_curves(),
        "fig3": feasibility_region(f),
        "fig4": deposit_curve(f),
    }


def write_tables(tables: dict[str, Table], out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, tab in tables.items():
        p = out_dir / f"{name}.csv"
        p.write_text(tab.to_csv())
        paths.append(p)
    return paths
