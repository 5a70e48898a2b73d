"""Command line: ``snare run | tables | sweep | replay``."""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

from .runner import ConfigError, ScenarioConfig, replay, run
from .sweep import (RUN_COLUMNS, SweepSpec, equilibrium_sweep, nofork_suite, rows_to_csv,
                    run_sweep)
from .tables import deposit_curve, emit_tables, feasibility_region, write_tables


def bundled_scenarios() -> list[str]:
    root = resources.files("snare") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_scenario(ref: str) -> ScenarioConfig:
    path = Path(ref)
    if not path.exists():
        cand = resources.files("snare") / "scenarios" / f"{ref}.json"
        if not cand.is_file():
            raise ConfigError([f"no scenario file or bundled scenario named {ref!r}"])
        return ScenarioConfig.from_dict(json.loads(cand.read_text()))
    return ScenarioConfig.load(path)


def _overrides(args) -> dict:
    out = {}
    for name in ("f", "seed", "ticks", "gst", "delta", "regime"):
        v = getattr(args, name, None)
        if v is not None:
            out[name] = v
    return out


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--f", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--ticks", type=int, help="tick budget before a liveness timeout")
    p.add_argument("--gst", type=int)
    p.add_argument("--delta", type=int)
    p.add_argument("--regime", choices=("auto", "nofork", "fork"))
    p.add_argument("--out-dir", type=Path, default=Path("out"))


def cmd_run(args) -> int:
    try:
        sc = load_scenario(args.config) if args.config else ScenarioConfig()
        d = sc.to_dict()
        d.update(_overrides(args))
        sc = ScenarioConfig.from_dict(d)
    except ConfigError as e:
        for p in e.problems:
            print(f"config error: {p}", file=sys.stderr)
        return 2
    res = run(sc)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    path = args.out_dir / f"{sc.name}-seed{sc.seed}.jsonl"
    res.log.write(path)
    o = res.outcome
    print(json.dumps({"scenario": sc.name, "seed": sc.seed, "log": str(path), **o.to_json(),
                      "expectations_met": res.expectations_met}, sort_keys=True))
    return 0 if res.expectations_met else 1


def cmd_tables(args) -> int:
    f = 20 if args.f is None else args.f
    paths = write_tables(emit_tables(f), args.out_dir)
    for p in paths:
        print(p)
    return 0


def cmd_sweep(args) -> int:
    f = 20 if args.f is None else args.f
    args.out_dir.mkdir(parents=True, exist_ok=True)
    if args.kind == "deposit":
        text, name = deposit_curve(f).to_csv(), f"fig4_deposit_curve_f{f}.csv"
    elif args.kind == "feasibility":
        text, name = feasibility_region(f).to_csv(), f"fig3_feasibility_f{f}.csv"
    elif args.kind == "equilibrium":
        lo, hi = (int(x) for x in args.k_range.split(":"))
        rows = equilibrium_sweep(f, args.t, range(lo, hi + 1), args.a)
        cols = ("C", "k", "t", "m", "L", "u_bait", "u_fork", "dominant", "mc_mean", "mc_se")
        text, name = rows_to_csv(rows, cols), f"equilibrium_f{f}_t{args.t}.csv"
    elif args.kind == "nofork":
        rows = nofork_suite(f, args.seeds)
        text, name = rows_to_csv(rows, RUN_COLUMNS), f"nofork_suite_f{f}.csv"
    else:
        sc = load_scenario(args.config) if args.config else ScenarioConfig(f=f)
        d = sc.to_dict()
        d.update(_overrides(args))
        sc = ScenarioConfig.from_dict(d)
        rows = run_sweep(SweepSpec(sc, seeds=range(args.seeds)))
        text, name = rows_to_csv(rows, RUN_COLUMNS), f"runs_{sc.name}.csv"
    path = args.out_dir / name
    path.write_text(text)
    print(path)
    return 0


def cmd_replay(args) -> int:
    verdict = replay(Path(args.log).read_text())
    print(verdict.message)
    return 0 if verdict.ok else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="snare", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="execute one seeded scenario")
    p.add_argument("config", nargs="?", help="scenario file or bundled scenario name")
    _add_common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("tables", help="emit table and figure CSVs")
    _add_common(p)
    p.set_defaults(func=cmd_tables)

    p = sub.add_parser("sweep", help="parameter sweeps")
    p.add_argument("kind", choices=("deposit", "feasibility", "equilibrium", "nofork", "runs"))
    p.add_argument("config", nargs="?")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--t", type=int, default=0)
    p.add_argument("--k-range", default="61:74")
    p.add_argument("--a", type=int, default=2)
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("replay", help="re-execute a run log and compare")
    p.add_argument("log")
    p.set_defaults(func=cmd_replay)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
