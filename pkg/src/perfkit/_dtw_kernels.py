"""Numba kernels for windowed DTW.

A window is given per row ``i`` as the column range ``[lo[i], hi[i])``; cell
``(i, j)`` lives at ``offs[i] + j - lo[i]`` in the flat cost/accumulator arrays.

Cells are ranked lexicographically: first by accumulated cost, then, among
exactly equal costs, by accumulated distance from the straight line joining the
two corners. Runs of identical frames (sustained chords) produce many equally
cheap paths and the second key keeps the chosen one near the average tempo.
"""
import numba
import numpy as np

DIAG, UP, LEFT = 0, 1, 2


@numba.njit(cache=True)
def _cell(offs, lo, hi, i, j):
    if j < lo[i] or j >= hi[i]:
        return -1
    return offs[i] + j - lo[i]


@numba.njit(cache=True)
def accumulate(cost, offs, lo, hi):
    """Return accumulated cost and the predecessor step of every window cell."""
    n = lo.shape[0]
    m = hi[n - 1]
    slope = (m - 1) / (n - 1) if n > 1 else 0.0
    acc = np.full(cost.shape[0], np.inf)
    dev = np.full(cost.shape[0], np.inf)
    step = np.full(cost.shape[0], -1, dtype=np.int8)
    for i in range(n):
        for j in range(lo[i], hi[i]):
            k = offs[i] + j - lo[i]
            here = abs(j - i * slope)
            if i == 0 and j == 0:
                acc[k] = cost[k]
                dev[k] = here
                continue
            best = np.inf
            best_dev = np.inf
            best_step = -1
            # candidates in preference order; a later one wins only if strictly better
            for s in range(3):
                if s == DIAG:
                    kp = _cell(offs, lo, hi, i - 1, j - 1) if i > 0 else -1
                elif s == UP:
                    kp = _cell(offs, lo, hi, i - 1, j) if i > 0 else -1
                else:
                    kp = k - 1 if j > lo[i] else -1
                if kp < 0:
                    continue
                if acc[kp] < best or (acc[kp] == best and dev[kp] < best_dev):
                    best = acc[kp]
                    best_dev = dev[kp]
                    best_step = s
            acc[k] = cost[k] + best
            dev[k] = here + best_dev
            step[k] = best_step
    return acc, step


@numba.njit(cache=True)
def backtrack(step, offs, lo, hi):
    """Follow stored predecessor steps back from the last cell."""
    n = lo.shape[0]
    m = hi[n - 1]
    path_i = np.empty(n + m, dtype=np.int64)
    path_j = np.empty(n + m, dtype=np.int64)
    i = n - 1
    j = m - 1
    count = 0
    while True:
        path_i[count] = i
        path_j[count] = j
        count += 1
        if i == 0 and j == 0:
            break
        s = step[_cell(offs, lo, hi, i, j)]
        if s == DIAG:
            i -= 1
            j -= 1
        elif s == UP:
            i -= 1
        elif s == LEFT:
            j -= 1
        else:
            break
    return path_i[:count][::-1].copy(), path_j[:count][::-1].copy()
