"""Pure-Python matcher kernels; reference semantics for the compiled module."""

from __future__ import annotations


def contains_ids(haystack, needle) -> bool:
    """True when `needle` occurs as a contiguous run inside `haystack`.

    Both arguments are sequences of integer token ids. An empty needle
    matches anything.
    """
    n = len(needle)
    if n == 0:
        return True
    h = len(haystack)
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


def batch_contains(haystack, needles) -> list[bool]:
    """contains_ids for every needle, in order."""
    return [contains_ids(haystack, needle) for needle in needles]
