"""Pure-Python combinatorial kernels (fallback for the compiled module)."""

from __future__ import annotations

from itertools import combinations, combinations_with_replacement


def quorum_masks(n: int, h: int) -> list[int]:
    """Bitmasks of every signer set of size >= h over n players."""
    masks = []
    for size in range(h, n + 1):
        for combo in combinations(range(n), size):
            m = 0
            for p in combo:
                m |= 1 << p
            masks.append(m)
    return masks


def min_pair_overlap(n: int, h: int) -> int:
    masks = quorum_masks(n, h)
    best = n
    for i, s in enumerate(masks):
        for t in masks[i:]:
            c = bin(s & t).count("1")
            if c < best:
                best = c
    return best


def max_undetected(n: int, h: int, C: int, a: int) -> int:
    """Brute force: over every choice of ``a`` quorum-sized signer sets in
    which non-coalition players (ids >= C) sign at most once, the largest
    number of coalition members (ids < C) that sign at most one set.
    Returns -1 when no such choice exists."""
    masks = quorum_masks(n, h)
    coalition = (1 << C) - 1
    honest = ((1 << n) - 1) ^ coalition
    best = -1
    for combo in combinations_with_replacement(masks, a):
        seen_once = 0
        seen_twice = 0
        ok = True
        for m in combo:
            if m & seen_once & honest:
                ok = False
                break
            seen_twice |= seen_once & m
            seen_once |= m
        if not ok:
            continue
        single = bin(coalition & ~seen_twice).count("1")
        if single > best:
            best = single
    return best
