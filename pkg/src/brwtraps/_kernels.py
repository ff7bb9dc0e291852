"""Compiled stencil kernels for the killed-walk survival DP.

At step k the walk from the centre sits on sites at l1 distance <= k with
parity k, so only that half-diamond is computed.  Sites of the other parity
keep stale values from step k-1; they are never read at step k+1.

Each step returns the mass kept on vacant sites and, separately, the mass
that landed on traps.  The grid carries a two-site pad so that mass leaving
the box lands on a (trap) ring site inside the loop range and is counted.
"""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True)
def step2d(cur, nxt, vac, ci, cj, k, scale):
    n0, n1 = cur.shape
    total = 0.0
    lost = 0.0
    for i in range(max(1, ci - k), min(n0 - 1, ci + k + 1)):
        rem = k - abs(i - ci)
        j0 = max(1, cj - rem)
        j1 = min(n1 - 1, cj + rem + 1)
        if ((i - ci) + (j0 - cj) - k) % 2 != 0:
            j0 += 1
        for j in range(j0, j1, 2):
            v = scale * (cur[i - 1, j] + cur[i + 1, j] + cur[i, j - 1] + cur[i, j + 1])
            if vac[i, j]:
                nxt[i, j] = v
                total += v
            else:
                nxt[i, j] = 0.0
                lost += v
    return total, lost


@numba.njit(cache=True)
def step3d(cur, nxt, vac, ci, cj, cl, k, scale):
    n0, n1, n2 = cur.shape
    total = 0.0
    lost = 0.0
    for i in range(max(1, ci - k), min(n0 - 1, ci + k + 1)):
        remi = k - abs(i - ci)
        for j in range(max(1, cj - remi), min(n1 - 1, cj + remi + 1)):
            rem = remi - abs(j - cj)
            l0 = max(1, cl - rem)
            l1 = min(n2 - 1, cl + rem + 1)
            if ((i - ci) + (j - cj) + (l0 - cl) - k) % 2 != 0:
                l0 += 1
            for l in range(l0, l1, 2):
                v = scale * (
                    cur[i - 1, j, l] + cur[i + 1, j, l]
                    + cur[i, j - 1, l] + cur[i, j + 1, l]
                    + cur[i, j, l - 1] + cur[i, j, l + 1]
                )
                if vac[i, j, l]:
                    nxt[i, j, l] = v
                    total += v
                else:
                    nxt[i, j, l] = 0.0
                    lost += v
    return total, lost


def killed_walk_log_survival(vac: np.ndarray, centre: tuple[int, ...], n: int):
    """Return (log q_k for k=0..n, per-step factors q_k/q_{k-1}).

    ``vac`` is the vacancy indicator padded by two layers of False.  The step
    factor is 1 - lost while little mass dies (exactly 1 on trap-free ground,
    never above 1) and the kept mass otherwise, avoiding cancellation.
    """
    d = vac.ndim
    vac_u8 = np.ascontiguousarray(vac, dtype=np.uint8)
    cur = np.zeros(vac.shape)
    nxt = np.zeros(vac.shape)
    cur[centre] = 1.0
    log_q = np.empty(n + 1)
    factors = np.zeros(n)
    log_q[0] = 0.0
    # the values held in ``cur`` sum to ``prev``; fold 1/prev into the step
    prev = 1.0
    for k in range(1, n + 1):
        scale = 1.0 / (2 * d * prev)
        if d == 2:
            total, lost = step2d(cur, nxt, vac_u8, centre[0], centre[1], k, scale)
        else:
            total, lost = step3d(cur, nxt, vac_u8, centre[0], centre[1], centre[2], k, scale)
        if total == 0.0:
            log_q[k:] = -np.inf
            break
        factor = 1.0 - lost if lost < 0.5 else min(total, 1.0)
        factors[k - 1] = factor
        log_q[k] = log_q[k - 1] + np.log(factor)
        prev = total
        cur, nxt = nxt, cur
    return log_q, factors
