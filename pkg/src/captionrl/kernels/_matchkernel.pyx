# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled matcher kernels. Semantics mirror captionrl.kernels.pure."""


def contains_ids(int[:] haystack, int[:] needle):
    cdef Py_ssize_t h = haystack.shape[0]
    cdef Py_ssize_t n = needle.shape[0]
    cdef Py_ssize_t start, j
    cdef int first
    if n == 0:
        return True
    if n > h:
        return False
    first = needle[0]
    for start in range(h - n + 1):
        if haystack[start] != first:
            continue
        for j in range(1, n):
            if haystack[start + j] != needle[j]:
                break
        else:
            return True
    return False


def batch_contains(int[:] haystack, list needles):
    cdef list out = []
    cdef Py_ssize_t i
    for i in range(len(needles)):
        out.append(contains_ids(haystack, needles[i]))
    return out
