"""
JIT-compiled event loops for dephydro
All kernels work on uint8 occupancy arrays indexed 0..L-1
"""

import numpy as np
from numba import njit

# phi outcome codes
NOOP = 0
SWAP_ADJACENT = 1
SWAP_LONG = 2
SWAP_LONG_IDLE = 3

# audit status codes
AUDIT_OK = 0
AUDIT_COUNT_INCREASE = 1
AUDIT_SIGN_FLIP = 2
AUDIT_SWAP = 3
AUDIT_DELTA_INCREASE = 4
AUDIT_ORDER_BROKEN = 5

AUDIT_NAMES = {
    AUDIT_COUNT_INCREASE: "discrepancy count increased",
    AUDIT_SIGN_FLIP: "discrepancy changed sign",
    AUDIT_SWAP: "opposite discrepancies swapped positions",
    AUDIT_DELTA_INCREASE: "delta increased",
    AUDIT_ORDER_BROKEN: "ordered pair lost its order",
}


@njit(cache=True)
def wrap(i, L, ring):
    """Array index of i, or -1 when i is off a segment"""
    if ring:
        if i >= L:
            return i - L
        if i < 0:
            return i + L
        return i
    if i < 0 or i >= L:
        return -1
    return i


@njit(cache=True)
def phi_inplace(eta, x, ring):
    L = eta.shape[0]
    x1 = wrap(x + 1, L, ring)
    if x1 < 0:
        return NOOP
    a = eta[x]
    b = eta[x1]
    if a != b:
        eta[x] = b
        eta[x1] = a
        return SWAP_ADJACENT
    x2 = wrap(x + 2, L, ring)
    if x2 < 0:
        return NOOP
    c = eta[x2]
    if c == a:
        return SWAP_LONG_IDLE
    eta[x] = c
    eta[x2] = a
    return SWAP_LONG


@njit(cache=True)
def run_events(eta, sites, alphas, ring, currents, track):
    """Apply gated Phi updates in order; returns the number of particle moves"""
    L = eta.shape[0]
    moves = 0
    for k in range(sites.shape[0]):
        x = sites[k]
        a = eta[x]
        if a != alphas[k]:
            continue
        code = phi_inplace(eta, x, ring)
        if code == SWAP_ADJACENT or code == SWAP_LONG:
            moves += 1
            if track:
                sign = 1 if a == 1 else -1
                currents[x] += sign
                if code == SWAP_LONG:
                    currents[wrap(x + 1, L, ring)] += sign
    return moves


@njit(cache=True)
def run_coupled(etas, sites, alphas, ring):
    J = etas.shape[0]
    for k in range(sites.shape[0]):
        x = sites[k]
        for j in range(J):
            if etas[j, x] == alphas[k]:
                phi_inplace(etas[j], x, ring)


@njit(cache=True)
def delta_kernel(zeta, xi, ring):
    """Sup of |partial sums of zeta - xi|; rings take the best cut"""
    s = 0
    hi = 0
    lo = 0
    for i in range(zeta.shape[0]):
        s += np.int64(zeta[i]) - np.int64(xi[i])
        if s > hi:
            hi = s
        if s < lo:
            lo = s
    if ring:
        return (hi - lo + 1) // 2
    return max(hi, -lo)


@njit(cache=True)
def count_discrepancies(zeta, xi):
    n = 0
    for i in range(zeta.shape[0]):
        if zeta[i] != xi[i]:
            n += 1
    return n


@njit(cache=True)
def _window_signs(etas, j, k, idx, out):
    n = 0
    for p in range(5):
        i = idx[p]
        if i < 0:
            continue
        d = np.int64(etas[j, i]) - np.int64(etas[k, i])
        if d != 0:
            out[n] = d
            n += 1
    return n


@njit(cache=True)
def _is_subsequence(small, n_small, big, n_big):
    i = 0
    for p in range(n_small):
        while i < n_big and big[i] != small[p]:
            i += 1
        if i == n_big:
            return False
        i += 1
    return True


@njit(cache=True)
def run_audited(etas, sites, alphas, ring, ordered, delta_pairs, count_series, delta_series, info):
    """Coupled run auditing every pair inside the 5-site window of each event

    ordered[j, k] marks pairs with copy k <= copy j at the start.
    count_series / delta_series record pair (0, 1) after every event.
    On violation info holds (event index, j, k) and the status code is returned.
    """
    J = etas.shape[0]
    L = etas.shape[1]
    counts = np.zeros((J, J), dtype=np.int64)
    deltas = np.zeros((J, J), dtype=np.int64)
    for j in range(J):
        for k in range(j + 1, J):
            counts[j, k] = count_discrepancies(etas[j], etas[k])
            if delta_pairs[j, k]:
                deltas[j, k] = delta_kernel(etas[j], etas[k], ring)

    idx = np.empty(5, dtype=np.int64)
    before = np.empty((J, 5), dtype=np.uint8)
    sb = np.empty(5, dtype=np.int64)
    sa = np.empty(5, dtype=np.int64)

    for e in range(sites.shape[0]):
        x = sites[e]
        for p in range(5):
            idx[p] = wrap(x - 2 + p, L, ring)
        for j in range(J):
            for p in range(5):
                if idx[p] >= 0:
                    before[j, p] = etas[j, idx[p]]
        for j in range(J):
            if etas[j, x] == alphas[e]:
                phi_inplace(etas[j], x, ring)

        for j in range(J):
            for k in range(j + 1, J):
                changed = False
                for p in range(5):
                    i = idx[p]
                    if i >= 0 and (before[j, p] != etas[j, i] or before[k, p] != etas[k, i]):
                        changed = True
                if not changed:
                    continue
                nb = 0
                for p in range(5):
                    i = idx[p]
                    if i >= 0:
                        d = np.int64(before[j, p]) - np.int64(before[k, p])
                        if d != 0:
                            sb[nb] = d
                            nb += 1
                na = _window_signs(etas, j, k, idx, sa)
                info[0] = e
                info[1] = j
                info[2] = k
                if na > nb:
                    return AUDIT_COUNT_INCREASE
                sum_b = 0
                sum_a = 0
                for p in range(nb):
                    sum_b += sb[p]
                for p in range(na):
                    sum_a += sa[p]
                if sum_a != sum_b:
                    return AUDIT_SIGN_FLIP
                if not _is_subsequence(sa, na, sb, nb):
                    return AUDIT_SWAP
                if ordered[j, k]:
                    for p in range(na):
                        if sa[p] < 0:
                            return AUDIT_ORDER_BROKEN
                counts[j, k] += na - nb
                if delta_pairs[j, k]:
                    d = delta_kernel(etas[j], etas[k], ring)
                    if d > deltas[j, k]:
                        return AUDIT_DELTA_INCREASE
                    deltas[j, k] = d
        count_series[e] = counts[0, 1]
        delta_series[e] = deltas[0, 1]
    info[0] = -1
    return AUDIT_OK


@njit(cache=True)
def run_until_disagree(zeta, xi, sites, alphas, ring, lo, hi):
    """Index of the first event leaving zeta != xi somewhere in [lo, hi], else -1"""
    L = zeta.shape[0]
    for e in range(sites.shape[0]):
        x = sites[e]
        if zeta[x] == alphas[e]:
            phi_inplace(zeta, x, ring)
        if xi[x] == alphas[e]:
            phi_inplace(xi, x, ring)
        for p in range(3):
            i = wrap(x + p, L, ring)
            if i >= lo and i <= hi and zeta[i] != xi[i]:
                return e
    return -1


@njit(cache=True)
def run_until_discrepancy_change(zeta, xi, sites, alphas, ring):
    """Index of the first event that moves, creates or removes a discrepancy, else -1"""
    L = zeta.shape[0]
    before = np.empty(3, dtype=np.int64)
    for e in range(sites.shape[0]):
        x = sites[e]
        for p in range(3):
            i = wrap(x + p, L, ring)
            before[p] = -9 if i < 0 else np.int64(zeta[i]) - np.int64(xi[i])
        if zeta[x] == alphas[e]:
            phi_inplace(zeta, x, ring)
        if xi[x] == alphas[e]:
            phi_inplace(xi, x, ring)
        for p in range(3):
            i = wrap(x + p, L, ring)
            if i >= 0 and np.int64(zeta[i]) - np.int64(xi[i]) != before[p]:
                return e
    return -1
