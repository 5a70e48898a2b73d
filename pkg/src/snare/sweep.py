"""Parameter sweeps over seeded runs and closed forms."""

from __future__ import annotations

import csv
import io
import itertools
import os
from dataclasses import dataclass, field
from fractions import Fraction
from multiprocessing import Pool
from typing import Iterable, Optional

from .core import DomainError, SystemParams
from .regime import classify_regime
from .runner import ScenarioConfig, run
from .settlement import equilibrium_report
from .strategies import LIBRARY, min_coalition

DEFAULT_CAP = 100_000
RUN_COLUMNS = ("strategy", "f", "C", "k", "t", "seed", "gst", "cons", "a", "detected", "winner",
               "liveness_timeout", "wc_violation", "ticks")


@dataclass
class SweepSpec:
    base: ScenarioConfig
    C: Iterable[int] = ()
    t: Iterable[int] = (0,)
    strategies: Iterable[str] = ()
    seeds: Iterable[int] = (0,)
    gst_cycle: int = 0  # gst = (7 * seed) % gst_cycle when > 0
    cap: int = DEFAULT_CAP
    columns: tuple = RUN_COLUMNS

    def points(self) -> list[ScenarioConfig]:
        Cs = list(self.C) or [self.base.C]
        ts = list(self.t)
        names = list(self.strategies) or [self.base.strategy]
        seeds = list(self.seeds)
        size = len(Cs) * len(ts) * len(names) * len(seeds)
        if size > self.cap:
            raise DomainError(f"sweep has {size} runs, cap is {self.cap}")
        out = []
        for name, C, t, seed in itertools.product(names, Cs, ts, seeds):
            if t > C or C < min_coalition(name, self.base.f):
                continue
            gst = (7 * seed) % self.gst_cycle if self.gst_cycle else self.base.gst
            out.append(self.base.with_(strategy=name, k=C - t, t=t, seed=seed, gst=gst))
        return out


def _one(sc: ScenarioConfig) -> dict:
    r = run(sc, log_events=False)
    o = r.outcome
    return {"strategy": sc.strategy, "f": sc.f, "C": sc.C, "k": sc.k, "t": sc.t, "seed": sc.seed,
            "gst": sc.gst, "cons": o.cons, "a": o.a, "detected": len(o.slashed),
            "winner": "" if o.winner is None else o.winner,
            "liveness_timeout": int(o.liveness_timeout), "wc_violation": int(o.wc_violation),
            "ticks": r.log.extras["ticks"]}


def workers() -> int:
    return max(1, int(os.environ.get("SNARE_WORKERS", "1")))


def run_sweep(spec: SweepSpec, n_workers: Optional[int] = None) -> list[dict]:
    pts = spec.points()
    n_workers = workers() if n_workers is None else n_workers
    if n_workers > 1:
        with Pool(n_workers) as pool:
            rows = pool.map(_one, pts, chunksize=16)
    else:
        rows = [_one(p) for p in pts]
    rows.sort(key=lambda r: (r["strategy"], r["C"], r["t"], r["seed"]))
    return rows


def nofork_suite(f: int, seeds: int, strategies: Optional[Iterable[str]] = None,
                 ticks: int = 300, n_workers: Optional[int] = None) -> list[dict]:
    """Every library strategy at every coalition size up to 3f."""
    base = ScenarioConfig(f=f, ticks=ticks)
    spec = SweepSpec(base, C=range(1, 3 * f + 1), strategies=strategies or list(LIBRARY),
                     seeds=range(seeds), gst_cycle=30)
    return run_sweep(spec, n_workers)


def rows_to_csv(rows: list[dict], columns: Iterable[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def equilibrium_sweep(f: int, t: int, k_range: Iterable[int], a_bar: int = 2,
                      gain: Fraction = Fraction(1), trials: int = 100_000) -> list[dict]:
    """Analytic and Monte Carlo baiting payoffs at the table deposit."""
    from .settlement import table_deposit
    rows = []
    for k in k_range:
        C = k + t
        rep = classify_regime(C, t, f)
        if rep.d_min is None or C < 3 * f + 1 or k < 1:
            continue
        L = table_deposit(k, rep.m, f, a_bar) * gain
        e = equilibrium_report(SystemParams(f, gain), k, t, a_bar, L, trials=trials, seed=C)
        rows.append({"C": C, "k": k, "t": t, "m": e.m, "L": str(L), "u_bait": float(e.u_bait),
                     "u_fork": float(e.u_fork), "dominant": int(e.dominant),
                     "mc_mean": round(e.mc_mean, 9), "mc_se": round(e.mc_se, 9)})
    return rows
