"""Compiled evaluation of polynomial vector fields stored as flat arrays."""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _powers(x, maxdeg):
    p = np.empty((4, maxdeg + 1))
    for k in range(4):
        p[k, 0] = 1.0
        for j in range(1, maxdeg + 1):
            p[k, j] = p[k, j - 1] * x[k]
    return p


@njit(cache=True)
def eval_poly_arrays(comp, coef, exps, maxdeg, x, out):
    """Accumulate sum_k coef[k] * x**exps[k] into out[comp[k]]."""
    for i in range(out.shape[0]):
        out[i] = 0.0
    p = _powers(x, maxdeg)
    for k in range(coef.shape[0]):
        out[comp[k]] += coef[k] * p[0, exps[k, 0]] * p[1, exps[k, 1]] * p[2, exps[k, 2]] * p[3, exps[k, 3]]


@njit(cache=True)
def eval_poly_batch(comp, coef, exps, maxdeg, xs, ncomp):
    n = xs.shape[0]
    out = np.empty((n, ncomp))
    buf = np.empty(ncomp)
    for i in range(n):
        eval_poly_arrays(comp, coef, exps, maxdeg, xs[i], buf)
        for j in range(ncomp):
            out[i, j] = buf[j]
    return out
