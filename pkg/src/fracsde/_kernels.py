"""Compiled inner loops.

Every reduction here runs over the history index in ascending order with no
reassociation, so a path's result never depends on how many other paths share
the call or on the worker that runs it.
"""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def history_sum(weights, hist, n, out):
    """out[b, k] = sum_{i < n} weights[n - 1 - i] * hist[b, i, k], summed for i = 0, 1, ..."""
    n_paths, _, dim = hist.shape
    for b in range(n_paths):
        for k in range(dim):
            acc = 0.0
            for i in range(n):
                acc += weights[n - 1 - i] * hist[b, i, k]
            out[b, k] = acc


@numba.njit(cache=True, nogil=True)
def convolve_all(weights, values, out):
    """out[n] = sum_{i < n} weights[n - 1 - i] * values[i] for n = 0..len(values)."""
    n_total = values.shape[0]
    out[0] = 0.0
    for n in range(1, n_total + 1):
        acc = 0.0
        for i in range(n):
            acc += weights[n - 1 - i] * values[i]
        out[n] = acc


def history_sum_py(weights: np.ndarray, hist: np.ndarray, n: int) -> np.ndarray:
    out = np.empty((hist.shape[0], hist.shape[2]))
    history_sum(weights, hist, n, out)
    return out


@numba.njit(cache=True, nogil=True)
def running_mean_extrema(vals, prev, carry, shift, a, h, j0, lo, hi):
    """Advance a trapezoid running integral through ``vals`` (points x cells).

    ``prev`` is the sample just before ``vals`` (skipped when ``j0 == 0``);
    ``carry`` is updated in place and ``lo``/``hi`` track the extremes of
    shift + I(t)/t with t = a + h * (j0 + row).
    """
    n_rows, n_cells = vals.shape
    for c in range(n_cells):
        acc = carry[c]
        last = prev[c]
        mn = lo[c]
        mx = hi[c]
        for r in range(n_rows):
            v = vals[r, c]
            if j0 + r > 0:
                acc += 0.5 * h * (last + v)
                m = shift[c] + acc / (a + h * (j0 + r))
                if m < mn:
                    mn = m
                if m > mx:
                    mx = m
            last = v
        carry[c] = acc
        prev[c] = last
        lo[c] = mn
        hi[c] = mx
