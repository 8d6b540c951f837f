"""Compiled inner loops. All kernels release the GIL."""
import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def log_tau_factor(values, offsets, env, tau, K):
    lo = offsets[env]
    hi = offsets[env + 1]
    n = hi - lo
    # entries at least as long as tau
    b = n - np.searchsorted(values[lo:hi], tau, side="left")
    return np.log((b + 1.0) / (n + K))


@njit(cache=True, nogil=True)
def window_log_weights(u, witems, wtaus, e, c, a, n, alpha_zeta, beta, B,
                       tab_values, tab_offsets, use_tau, out):
    K = e.shape[0]
    n_items = c.shape[0]
    slots = B + 1
    for M in range(K):
        lw = np.log(e[M, u] + alpha_zeta[M]) - np.log(n[u] + K * alpha_zeta[M])
        denom = slots * a[M] + n_items * beta
        for k in range(B):
            s = witems[k]
            d = witems[k + 1]
            lw += np.log(c[d, M] + beta) - np.log(denom - c[s, M] - beta)
        if use_tau:
            for k in range(B):
                lw += log_tau_factor(tab_values, tab_offsets, M, wtaus[k], K)
        out[M] = lw


@njit(cache=True, nogil=True)
def gibbs_sweep(users, items, taus, z, e, c, a, n, alpha_zeta, beta, B,
                tab_values, tab_offsets, use_tau, uniforms):
    """One collapsed Gibbs pass over windows in index order.

    Returns the number of non-finite weight vectors met (the caller treats
    any as corruption); sampling stops at the first one.
    """
    K = e.shape[0]
    slots = B + 1
    logw = np.empty(K)
    cum = np.empty(K)
    for w in range(users.shape[0]):
        u = users[w]
        old = z[w]
        e[old, u] -= 1
        n[u] -= 1
        a[old] -= 1
        for k in range(slots):
            c[items[w, k], old] -= 1

        window_log_weights(u, items[w], taus[w], e, c, a, n, alpha_zeta, beta, B,
                           tab_values, tab_offsets, use_tau, logw)
        mx = logw[0]
        for M in range(1, K):
            if logw[M] > mx:
                mx = logw[M]
        if not np.isfinite(mx):
            return 1
        total = 0.0
        for M in range(K):
            total += np.exp(logw[M] - mx)
            cum[M] = total
        target = uniforms[w] * total
        new = K - 1
        for M in range(K):
            if cum[M] > target:
                new = M
                break

        z[w] = new
        e[new, u] += 1
        n[u] += 1
        a[new] += 1
        for k in range(slots):
            c[items[w, k], new] += 1
    return 0


@njit(cache=True, nogil=True)
def multiset_remove(values, removals):
    """Keep-mask deleting one occurrence of each removal.

    Both inputs sorted ascending. Returns (mask, n_unmatched).
    """
    keep = np.ones(values.shape[0], dtype=np.bool_)
    i = 0
    missing = 0
    for r in range(removals.shape[0]):
        x = removals[r]
        while i < values.shape[0] and values[i] < x:
            i += 1
        if i < values.shape[0] and values[i] == x:
            keep[i] = False
            i += 1
        else:
            missing += 1
    return keep, missing


@njit(cache=True, nogil=True)
def tail_log_sum(sorted_vals):
    """Sum over entries t of log(#{entries >= t} + 1) for one sorted table."""
    n = sorted_vals.shape[0]
    total = 0.0
    i = 0
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        b = n - i
        total += (j - i + 1) * np.log(b + 1.0)
        i = j + 1
    return total
