"""Robust locally weighted linear regression (lowess).

For each point the ``q = ceil(fraction * n)`` nearest neighbours (at least
2, at most n) define a bandwidth ``h`` equal to the q-th smallest distance;
neighbours get tricube weights ``(1 - (d/h)^3)^3``. A weighted straight line
is fitted and evaluated at the point. The fitted value is clipped to the
range of y over the points with positive weight, which keeps smoothed 0/1
accuracies inside [0, 1]. After the first pass, ``iterations`` robustifying
passes reweight each point by the bisquare of ``residual / (6 * median|residual|)``.

Degenerate neighbourhoods (``h == 0`` or all support points at one x) fall
back to the weighted mean.
"""
from __future__ import annotations

import math

import numpy as np


def _fit_point(xs, ys, i, lo, hi, q, robust, prev):
    x0 = xs[i]
    d = np.abs(xs[lo:hi] - x0)
    h = np.partition(d, q - 1)[q - 1] if hi - lo > q else d.max()
    if h > 0:
        u = np.minimum(d / h, 1.0)
        w = (1.0 - u ** 3) ** 3
    else:
        w = (d == 0).astype(np.float64)
    w = w * robust[lo:hi]
    sw = w.sum()
    if sw <= 0:
        return prev
    support = w > 0
    xw, yw = xs[lo:hi], ys[lo:hi]
    x_sup = xw[support]
    ybar = np.dot(w, yw) / sw
    if x_sup.min() == x_sup.max():
        fit = ybar
    else:
        xbar = np.dot(w, xw) / sw
        dx = xw - xbar
        slope = np.dot(w, dx * (yw - ybar)) / np.dot(w, dx * dx)
        fit = ybar + slope * (x0 - xbar)
    y_sup = yw[support]
    return min(max(fit, y_sup.min()), y_sup.max())


def lowess(x, y, fraction: float = 2.0 / 3.0, iterations: int = 3):
    """Smooth ``y`` against ``x``. Returns ``(x_sorted, smoothed)`` as arrays.

    Ties in ``x`` keep their input order.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(x)
    if n < 2 or len(y) != n:
        raise ValueError("lowess needs at least 2 points and equal-length x, y")
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    q = min(n, max(2, math.ceil(fraction * n)))

    # Candidate window for point i: the q nearest points form a contiguous
    # run in sorted order; widen it to include every point tied with an edge.
    windows = []
    lo = 0
    for i in range(n):
        while lo + q < n and xs[lo + q] - xs[i] < xs[i] - xs[lo]:
            lo += 1
        hi = lo + q
        # exact-equality extension, so no roundoff can move the bandwidth
        a = int(np.searchsorted(xs, xs[lo], side="left"))
        b = int(np.searchsorted(xs, xs[hi - 1], side="right"))
        windows.append((a, b))

    robust = np.ones(n)
    fitted = np.zeros(n)
    threshold = 1e-12 * np.mean(np.abs(ys))
    for it in range(iterations + 1):
        fitted = np.array([
            _fit_point(xs, ys, i, a, b, q, robust, fitted[i]) for i, (a, b) in enumerate(windows)
        ])
        if it == iterations:
            break
        resid = ys - fitted
        s = np.median(np.abs(resid))
        if s <= threshold:
            break
        u = np.clip(resid / (6.0 * s), -1.0, 1.0)
        robust = (1.0 - u ** 2) ** 2
    return xs, fitted
