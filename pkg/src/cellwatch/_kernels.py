"""Compiled inner loops for the batch paths.

Each kernel performs exactly the per-sample recursion of its pure-Python
counterpart, in the same operation order.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def lowpass(x, alpha, y0):
    """First-order low-pass over the rows of ``x`` (shape ``(k, m)``).

    ``y0`` holds the previous output per column; NaN seeds with the first input.
    """
    k, m = x.shape
    y = np.empty_like(x)
    beta = 1.0 - alpha
    for j in range(m):
        prev = y0[j]
        start = 0
        if np.isnan(prev):
            prev = x[0, j]
            y[0, j] = prev
            start = 1
        for i in range(start, k):
            prev = alpha * x[i, j] + beta * prev
            y[i, j] = prev
    return y


@njit(cache=True)
def cusum(y, mu, slack, limit, two_sided, cp0, cm0):
    """Tabular CUSUM per column; returns C+, C- and the flag matrix."""
    k, m = y.shape
    cp = np.empty_like(y)
    cm = np.empty_like(y)
    flags = np.empty((k, m), dtype=np.bool_)
    for j in range(m):
        p = cp0[j]
        q = cm0[j]
        for i in range(k):
            d = y[i, j] - mu[j]
            p = max(0.0, p + d - slack[j])
            q = max(0.0, q - d - slack[j])
            cp[i, j] = p
            cm[i, j] = q
            flags[i, j] = p > limit[j] or (two_sided and q > limit[j])
    return cp, cm, flags


@njit(cache=True)
def simulate_cells(
    current, r_sc, ambient, fan, dt,
    r0, r1, c1, q, a, b, ocv_slope, ocv_intercept,
    z0, vc0, temp0, short_heat,
):
    """Euler simulation of ``m`` cells over ``k`` samples.

    ``current`` and ``ambient``/``fan`` are shared, ``(k,)``; ``r_sc`` and
    ``b`` are ``(k, m)`` so anomalies can switch them per sample. ``r_sc``
    of ``inf`` means no short. Outputs are the pre-step values at each sample.
    """
    k = current.shape[0]
    m = r0.shape[0]
    v = np.empty((k, m))
    temp = np.empty((k, m))
    soc = np.empty((k, m))
    vcs = np.empty((k, m))
    isc = np.empty((k, m))
    for j in range(m):
        z = z0[j]
        vc = vc0[j]
        tc = temp0[j]
        for i in range(k):
            ii = current[i]
            rs = r_sc[i, j]
            ocv = ocv_intercept[j] + ocv_slope[j] * z
            open_v = ocv - vc - ii * r0[j]
            if np.isinf(rs):
                vt = open_v
                isct = 0.0
                heat_sc = 0.0
            else:
                isct = open_v / (r0[j] + rs)
                vt = isct * rs
                heat_sc = isct * isct * rs if short_heat[j] else 0.0
            v[i, j] = vt
            temp[i, j] = tc
            soc[i, j] = z
            vcs[i, j] = vc
            isc[i, j] = isct
            ib = ii + isct
            heat = ii * ii * r0[j] + heat_sc + vc * vc / r1[j]
            dtemp = a[j] * heat + b[i, j] * (tc - ambient[i]) * fan[i]
            z = z - ib / (36.0 * q[j]) * dt
            vc = vc + (-vc / (r1[j] * c1[j]) + ib / c1[j]) * dt
            tc = tc + dtemp * dt
    return v, temp, soc, vcs, isc


@njit(cache=True)
def thermostat(current, ambient, dt, r0, r1, c1, a, b, temp0, on_delta, off_delta):
    """Fan schedule from a reference cell with hysteresis on ``T - T_amb``."""
    k = current.shape[0]
    fan = np.zeros(k, dtype=np.int8)
    vc = 0.0
    tc = temp0
    state = 0
    for i in range(k):
        rise = tc - ambient[i]
        if state == 0 and rise > on_delta:
            state = 1
        elif state == 1 and rise < off_delta:
            state = 0
        fan[i] = state
        ii = current[i]
        heat = ii * ii * r0 + vc * vc / r1
        tc = tc + (a * heat + b * (tc - ambient[i]) * state) * dt
        vc = vc + (-vc / (r1 * c1) + ii / c1) * dt
    return fan
