# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled twins of the brute-force kernels in ``_pykernels``."""

from libc.stdlib cimport malloc, free

ctypedef unsigned long long u64


cdef inline int popcount(u64 x) nogil:
    return __builtin_popcountll(x)

cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil


def quorum_masks(int n, int h):
    from snare.kernels._pykernels import quorum_masks as qm
    return qm(n, h)


def min_pair_overlap(int n, int h):
    masks = quorum_masks(n, h)
    cdef Py_ssize_t cnt = len(masks), i, j
    cdef u64* arr = <u64*> malloc(cnt * sizeof(u64))
    cdef int best = n, c
    try:
        for i in range(cnt):
            arr[i] = masks[i]
        with nogil:
            for i in range(cnt):
                for j in range(i, cnt):
                    c = popcount(arr[i] & arr[j])
                    if c < best:
                        best = c
    finally:
        free(arr)
    return best


def max_undetected(int n, int h, int C, int a):
    if a < 1 or a > 16:
        raise ValueError("a must be in [1, 16]")
    masks = quorum_masks(n, h)
    cdef Py_ssize_t cnt = len(masks), i
    cdef u64* arr = <u64*> malloc(cnt * sizeof(u64))
    cdef Py_ssize_t idx[16]
    cdef u64 once[17]
    cdef u64 twice[17]
    cdef u64 coalition = ((<u64>1) << C) - 1
    cdef u64 honest = (((<u64>1) << n) - 1) ^ coalition
    cdef int best = -1, single, depth
    cdef u64 m
    try:
        for i in range(cnt):
            arr[i] = masks[i]
        with nogil:
            # Depth-first walk over nondecreasing index tuples, pruning on
            # honest double-signing.
            once[0] = 0
            twice[0] = 0
            depth = 0
            idx[0] = 0
            while depth >= 0:
                if idx[depth] >= cnt:
                    depth -= 1
                    if depth >= 0:
                        idx[depth] += 1
                    continue
                m = arr[idx[depth]]
                if m & once[depth] & honest:
                    idx[depth] += 1
                    continue
                once[depth + 1] = once[depth] | m
                twice[depth + 1] = twice[depth] | (once[depth] & m)
                if depth + 1 == a:
                    single = popcount(coalition & ~twice[depth + 1])
                    if single > best:
                        best = single
                    idx[depth] += 1
                else:
                    idx[depth + 1] = idx[depth]
                    depth += 1
    finally:
        free(arr)
    return best
