"""Compare the compiled and pure-Python brute-force kernels.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Both backends must agree on every case; the script exits non-zero if they
do not, or if the compiled extension is missing.
"""
import argparse
import sys
import timeit

from snare.kernels import compiled_backend, python_backend

CASES = [
    ("min_pair_overlap", (11, 9)),
    ("min_pair_overlap", (16, 13)),
    ("max_undetected", (6, 5, 4, 2)),
    ("max_undetected", (6, 5, 5, 3)),
    ("max_undetected", (11, 9, 7, 2)),
    ("max_undetected", (11, 9, 9, 2)),
]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if compiled_backend is None:
        print("compiled backend unavailable (build with pip install -e .)", file=sys.stderr)
        return 1
    print(f"{'kernel':<18}{'args':<16}{'python ms':>12}{'compiled ms':>14}{'speedup':>10}")
    for name, args_ in CASES:
        py, c = getattr(python_backend, name), getattr(compiled_backend, name)
        if py(*args_) != c(*args_):
            print(f"mismatch: {name}{args_}", file=sys.stderr)
            return 1
        t_py = min(timeit.repeat(lambda: py(*args_), number=1, repeat=args.repeat)) * 1e3
        t_c = min(timeit.repeat(lambda: c(*args_), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<18}{str(args_):<16}{t_py:>12.2f}{t_c:>14.3f}{t_py / max(t_c, 1e-9):>9.0f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
