"""Compiled event loop for closed-form rise functions with linear partial reset.

Performs exactly the same arithmetic as the numpy loop in
:mod:`partialreset.engine`, one oscillator at a time, which removes the
per-event interpreter overhead that dominates for networks of a few dozen
units.  Only used through :func:`partialreset.engine.simulate`.
"""
from __future__ import annotations

import numpy as np
import numba as nb

IDENTITY, UB, LIF, QIF = 0, 1, 2, 3

STATUS_OK = 0
STATUS_LIVELOCK = 1
STATUS_RESET_ABOVE = 2
STATUS_AVALANCHE = 3


def encode(U, R):
    """Family code and parameter vector for ``U``, or ``None`` if not supported."""
    if R.kind != "linear-c" or R.c is None:
        return None
    fam = U.family
    p = U.params
    prm = np.zeros(6)
    es = p.get("E_syn", 0.0) if fam in ("LIF-CB", "QIF-CB") else 0.0
    base = {"LIF-CB": "LIF", "QIF-CB": "QIF"}.get(fam, fam)
    if base == "identity":
        code = IDENTITY
    elif base == "Ub":
        code = UB
        prm[0] = p["b"]
        prm[1] = np.expm1(p["b"])
    elif base == "LIF":
        code = LIF
        prm[0] = p["E_eq"]
        prm[1] = p["g_l"] * p["T_LIF"]
    elif base == "QIF":
        code = QIF
        a, b = p["alpha"], p["beta"]
        A = np.arctan(a)
        prm[:4] = (a, A, A - np.arctan(b), a - b)
    else:
        return None
    if es:
        prm[4] = es
        prm[5] = np.log1p(-1.0 / es)
    return code, prm


@nb.njit(cache=True)
def _base_eval(code, prm, x):
    if code == UB:
        return np.log1p(prm[1] * x) / prm[0]
    if code == LIF:
        return -prm[0] * np.expm1(-prm[1] * x)
    if code == QIF:
        return (prm[0] - np.tan(prm[1] - prm[2] * x)) / prm[3]
    return x * 1.0


@nb.njit(cache=True)
def _base_inv(code, prm, u):
    if code == UB:
        return np.expm1(prm[0] * u) / prm[1]
    if code == LIF:
        return -np.log1p(-u / prm[0]) / prm[1]
    if code == QIF:
        return (prm[1] - np.arctan(prm[0] - prm[3] * u)) / prm[2]
    return u * 1.0


@nb.njit(cache=True)
def _eval(code, prm, x):
    v = _base_eval(code, prm, x)
    if prm[4] > 0.0:
        return (1.0 / prm[5]) * np.log1p(-v / prm[4])
    return v


@nb.njit(cache=True)
def _inv(code, prm, u):
    if prm[4] > 0.0:
        u = -prm[4] * np.expm1(u * prm[5])
    return _base_inv(code, prm, u)


@nb.njit(cache=True)
def _recurred(ring, count, head, cap, n, tol):
    # ring[(head - 1 - j) % cap] is the j-th most recent snapshot
    last = (head - 1) % cap
    for k in range(1, (count - 1) // 2 + 1):
        i1 = (head - 1 - k) % cap
        i2 = (head - 1 - 2 * k) % cap
        ok = True
        for m in range(n):
            if abs(ring[i1, m] - ring[last, m]) > tol or abs(ring[i2, m] - ring[i1, m]) > tol:
                ok = False
                break
        if ok:
            return True
    return False


@nb.njit(cache=True)
def run(p, E, eps_h, c, code, prm, ref, n_events, duration, tol, stop_periodic,
        min_ref, cap, periodic_tol, silent_limit, record):
    n = p.shape[0]
    times = np.empty(n_events if record else 0)
    offsets = np.zeros(n_events + 1 if record else 1, dtype=np.int64)
    flat = np.empty(n_events * n if record else 0, dtype=np.int32)
    ring = np.empty((cap, n))
    ring_t = np.empty(cap)
    head = 0
    count = 0
    u = np.empty(n)
    inp = np.empty(n)
    member = np.zeros(n, dtype=np.bool_)
    new = np.zeros(n, dtype=np.bool_)

    t = 1.0 - p.max()
    sigma = 1.0 - p.max()
    for i in range(n):
        p[i] += sigma
        if p[i] >= 1.0 - tol:
            p[i] = 1.0
    fired = 0
    silent = 0
    pos = 0
    status = STATUS_OK
    while fired < n_events and t <= duration:
        # potentials and trigger set
        k = 0
        for i in range(n):
            if p[i] >= 1.0 - tol:
                member[i] = True
                u[i] = 1.0
                k += 1
            else:
                member[i] = False
                u[i] = _eval(code, prm, p[i])
        # avalanche generations
        if eps_h < 0.0:
            for i in range(n):
                s = 0.0
                for j in range(n):
                    if member[j]:
                        s += E[i, j]
                inp[i] = s
        gens = 0
        while True:
            any_new = False
            for i in range(n):
                if member[i]:
                    new[i] = False
                elif eps_h >= 0.0:
                    new[i] = u[i] + k * eps_h >= 1.0 - tol
                else:
                    new[i] = u[i] + inp[i] >= 1.0 - tol
                any_new = any_new or new[i]
            if not any_new:
                break
            gens += 1
            if gens > n:
                return fired, t, times, offsets, flat, ring, ring_t, head, count, STATUS_AVALANCHE
            for i in range(n):
                if new[i]:
                    member[i] = True
                    k += 1
            if eps_h < 0.0:
                for i in range(n):
                    s = 0.0
                    for j in range(n):
                        if new[j]:
                            s += E[i, j]
                    inp[i] += s
        if eps_h >= 0.0:
            for i in range(n):
                inp[i] = eps_h * (k - (1 if member[i] else 0))
        # section snapshot before the firing of the reference unit
        if member[ref]:
            srt = np.sort(p)[::-1]
            ring[head % cap, :] = srt
            ring_t[head % cap] = t
            head = (head + 1) % cap
            count = min(count + 1, cap)
            silent = 0
        else:
            silent += 1
            if silent > silent_limit:
                status = STATUS_LIVELOCK
                break
        if record:
            times[fired] = t
            for i in range(n):
                if member[i]:
                    flat[pos] = i
                    pos += 1
            offsets[fired + 1] = pos
        fired += 1
        if member[ref] and stop_periodic and count > min_ref:
            if _recurred(ring, count, head, cap, n, periodic_tol):
                break
        # resets, conversion back to phases, shift to the next section
        mx = -np.inf
        for i in range(n):
            v = u[i] + inp[i]
            if member[i]:
                z = v - 1.0
                if z < 0.0:
                    z = 0.0
                r = c * z
                if r >= 1.0:
                    return fired, t, times, offsets, flat, ring, ring_t, head, count, STATUS_RESET_ABOVE
                v = r
            p[i] = _inv(code, prm, v)
            if p[i] > mx:
                mx = p[i]
        sigma = 1.0 - mx
        for i in range(n):
            p[i] += sigma
            if p[i] >= 1.0 - tol:
                p[i] = 1.0
        t += sigma
    return fired, t, times, offsets, flat, ring, ring_t, head, count, status
