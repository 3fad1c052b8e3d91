"""Compiled closed-loop kernel for diagonal states.

Same arithmetic as ``lyapunov_controller._expected_vw`` and
``kraus.branch_populations`` written as scalar loops. Populations that fall
below FLUSH are set to zero to keep the loop out of subnormal arithmetic.
"""

from __future__ import annotations

import numpy as np
from numba import njit

IMPOSSIBLE = 1e-14
TIE = 1e-12
SUPPORT = 1e-12
FLUSH = 1e-280

RUNNING, ABSORBED, OVER_CAPACITY = 0, 1, 2


@njit(cache=True)
def _expected(p, L, u, qg, qe, ug, ue, dg, de, d, eps):
    sg = se = vg = ve = wg = we = 0.0
    if u == 0:
        for n in range(L):
            bg = p[n] * qg[n]
            be = p[n] * qe[n]
            sg += bg
            se += be
            vg += bg * d[n]
            ve += be * d[n]
            wg += bg * bg
            we += be * be
    elif u == 1:
        for n in range(L):
            bg = p[n] * ug[n]
            be = p[n] * ue[n]
            sg += bg
            se += be
            vg += bg * d[n + 1]
            ve += be * d[n]
            wg += bg * bg
            we += be * be
    else:
        for n in range(L):
            bg = p[n] * dg[n]
            sg += bg
            vg += bg * d[n]
            wg += bg * bg
            if n > 0:
                be = p[n] * de[n]
                se += be
                ve += be * d[n - 1]
                we += be * be
    g_ok = sg > IMPOSSIBLE
    e_ok = se > IMPOSSIBLE
    if g_ok and e_ok:
        return vg + ve - eps * (wg / sg + we / se), sg
    if g_ok:
        return vg / sg - eps * wg / (sg * sg), sg
    return ve / se - eps * we / (se * se), sg


@njit(cache=True)
def run_chunk(p, L, qg, qe, ug, ue, dg, de, d, eps, nbar, tie, variates, stop_absorbed,
              absorb_tol, capacity, out_u, out_g, out_pg, out_below, out_goal, out_above,
              out_veps, out_nmax):
    """Advance the loop by up to ``variates.size`` steps, writing per-step columns.

    ``p`` is modified in place. Returns (steps_done, new_length, status, drift).
    """
    drift = 0.0
    E = np.empty(3)
    PG = np.empty(3)
    for s in range(variates.size):
        below = goal = above = v = w = 0.0
        nmax = 0
        for n in range(L):
            x = p[n]
            if n < nbar:
                below += x
            elif n == nbar:
                goal = x
            else:
                above += x
            v += x * d[n]
            w += x * x
            if x > SUPPORT:
                nmax = n
        for ci in range(3):
            E[ci], PG[ci] = _expected(p, L, ci - 1, qg, qe, ug, ue, dg, de, d, eps)
        lo = min(E[0], min(E[1], E[2]))
        hi = max(E[0], max(E[1], E[2]))
        tol = TIE * max(1.0, hi - lo)
        u = 0
        for t in range(3):
            if E[tie[t] + 1] - lo <= tol:
                u = tie[t]
                break
        pg = PG[u + 1]
        if pg <= IMPOSSIBLE:
            is_g = False
        elif 1.0 - pg <= IMPOSSIBLE:
            is_g = True
        else:
            is_g = variates[s] < pg
        out_u[s] = u
        out_g[s] = is_g
        out_pg[s] = pg
        out_below[s] = below
        out_goal[s] = goal
        out_above[s] = above
        out_veps[s] = v - eps * w
        out_nmax[s] = nmax
        if stop_absorbed and u == 0 and below + above <= absorb_tol:
            return s + 1, L, ABSORBED, drift
        if u == 0:
            wt = qg if is_g else qe
            for n in range(L):
                p[n] *= wt[n]
        elif u == 1:
            if is_g:
                if L + 1 > capacity:
                    return s + 1, L, OVER_CAPACITY, drift
                for n in range(L, 0, -1):
                    p[n] = p[n - 1] * ug[n - 1]
                p[0] = 0.0
                L += 1
            else:
                for n in range(L):
                    p[n] *= ue[n]
        else:
            if is_g:
                for n in range(L):
                    p[n] *= dg[n]
            else:
                for n in range(L - 1):
                    p[n] = p[n + 1] * de[n + 1]
                p[L - 1] = 0.0
        total = 0.0
        for n in range(L):
            total += p[n]
        py = pg if is_g else 1.0 - pg
        drift = max(drift, abs(total - py))
        for n in range(L):
            x = p[n] / total
            p[n] = x if x >= FLUSH else 0.0
        while L > 1 and p[L - 1] == 0.0:
            L -= 1
    return variates.size, L, RUNNING, drift
