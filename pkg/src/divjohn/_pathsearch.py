"""Compiled path search for the twisted-cone test.

A path of arclength s may sit on cell y only when rho(y) >= c * s; for a
fixed c this admissibility is monotone in s, so a plain Dijkstra on arrival
arclength visits each cell at its most permissive moment and pruning by the
first settle is exact. 8-connected steps cost h or sqrt(2) h.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def dijkstra_admissible(rho, h, c, si, sj, gi, gj, mu=0.0, s0=0.0):
    """Shortest admissible arclength from (si, sj) toward (gi, gj).

    Returns (arclength to goal or inf, predecessor array flat-indexed,
    arclength array). Cells with rho <= 0 are walls.

    s0 offsets the arclength at the start cell, so a search that continues
    an existing path prefix enforces admissibility against the total
    arclength of the spliced path.

    With mu = 0 the priority equals the true arclength (minus the constant
    s0) and first-settle pruning is exact. A positive mu (a length,
    typically the inradius) multiplies each step cost by 1 + (mu/rho)^2,
    pulling the path onto the distance-function ridge: circling an
    obstacle at depth r then costs r + mu^2/r per unit angle, which is
    decreasing in r for all r <= mu, so deeper detours always win.
    Admissibility still uses the true arclength of the arriving path, so
    any returned path remains admissible at c, but feasibility may then be
    conservative (used only to shape witness paths)."""
    nx, ny = rho.shape
    n = nx * ny
    inf = np.inf
    key_of = np.full(n, inf)
    strue = np.full(n, inf)
    pred = np.full(n, -1, dtype=np.int64)
    settled = np.zeros(n, dtype=np.uint8)
    cap = 8 * n + 8
    keys = np.empty(cap, dtype=np.float64)
    vals = np.empty(cap, dtype=np.int64)
    hn = 0
    start = si * ny + sj
    goal = gi * ny + gj
    if rho[si, sj] <= 0.0 or rho[gi, gj] <= 0.0:
        return inf, pred, strue
    key_of[start] = 0.0
    strue[start] = s0
    keys[0] = 0.0
    vals[0] = start
    hn = 1
    diag = np.sqrt(2.0) * h
    while hn > 0:
        k = keys[0]
        u = vals[0]
        hn -= 1
        keys[0] = keys[hn]
        vals[0] = vals[hn]
        i = 0
        while True:
            l = 2 * i + 1
            r = l + 1
            m = i
            if l < hn and keys[l] < keys[m]:
                m = l
            if r < hn and keys[r] < keys[m]:
                m = r
            if m == i:
                break
            keys[i], keys[m] = keys[m], keys[i]
            vals[i], vals[m] = vals[m], vals[i]
            i = m
        if settled[u]:
            continue
        settled[u] = 1
        if u == goal:
            return strue[u], pred, strue
        ui = u // ny
        uj = u % ny
        su = strue[u]
        for di in range(-1, 2):
            for dj in range(-1, 2):
                if di == 0 and dj == 0:
                    continue
                vi = ui + di
                vj = uj + dj
                if vi < 0 or vi >= nx or vj < 0 or vj >= ny:
                    continue
                v = vi * ny + vj
                if settled[v]:
                    continue
                rv = rho[vi, vj]
                if rv <= 0.0:
                    continue
                step = h if di == 0 or dj == 0 else diag
                ns = su + step
                if rv < c * ns:
                    continue
                nk = k + step * (1.0 + (mu / rv) ** 2)
                if nk < key_of[v]:
                    key_of[v] = nk
                    strue[v] = ns
                    pred[v] = u
                    j = hn
                    keys[j] = nk
                    vals[j] = v
                    hn += 1
                    while j > 0:
                        p = (j - 1) // 2
                        if keys[p] <= keys[j]:
                            break
                        keys[p], keys[j] = keys[j], keys[p]
                        vals[p], vals[j] = vals[j], vals[p]
                        j = p
    return inf, pred, strue


def extract_path(pred: np.ndarray, ny: int, start: tuple[int, int], goal: tuple[int, int]) -> np.ndarray:
    """Cell path start -> goal from the predecessor array, shape (L, 2)."""
    g = goal[0] * ny + goal[1]
    s = start[0] * ny + start[1]
    chain = [g]
    while chain[-1] != s:
        p = int(pred[chain[-1]])
        if p < 0:
            return np.empty((0, 2), dtype=np.int64)
        chain.append(p)
    cells = np.array(chain[::-1], dtype=np.int64)
    return np.stack([cells // ny, cells % ny], axis=1)
