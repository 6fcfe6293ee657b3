"""Numba kernels: thinning simulation, channel-state recursions, grid sampling.

All routines share one state convention: ``y`` holds the running value of every
excitation channel (node j, basis q) at the current position, decayed exactly
between updates because the basis is exponential.  Index 0 is the constant
baseline channel, fixed at 1.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _simulate_thinning(mu, alpha, betas, horizon, seed, cap):
    """Ogata thinning with an exact decreasing upper bound between events.

    Returns (times, nodes, n); n == -1 signals the caller that ``cap`` was too
    small and the run must be repeated with a larger buffer.
    """
    np.random.seed(seed)
    d = mu.shape[0]
    p = betas.shape[0]
    # w[j*p+q]: weight of channel (j, q) in the total intensity.
    w = np.zeros(d * p)
    for j in range(d):
        for q in range(p):
            s = 0.0
            for i in range(d):
                s += alpha[i, j, q]
            w[j * p + q] = s
    mu_tot = 0.0
    for i in range(d):
        mu_tot += mu[i]
    y = np.zeros(d * p)
    lam_node = np.zeros(d)
    times = np.empty(cap)
    nodes = np.empty(cap, dtype=np.int64)
    n = 0
    t = 0.0
    bound = mu_tot
    while bound > 0.0:
        dt = np.random.exponential(1.0 / bound)
        if t + dt >= horizon:
            break
        t = t + dt
        for q in range(p):
            f = np.exp(-betas[q] * dt)
            for j in range(d):
                y[j * p + q] *= f
        lam_tot = mu_tot
        for c in range(d * p):
            lam_tot += w[c] * y[c]
        if np.random.random() * bound <= lam_tot:
            for i in range(d):
                s = mu[i]
                for j in range(d):
                    base = j * p
                    for q in range(p):
                        s += alpha[i, j, q] * y[base + q]
                lam_node[i] = s
            r = np.random.random() * lam_tot
            acc = 0.0
            node = d - 1
            for i in range(d):
                acc += lam_node[i]
                if r <= acc:
                    node = i
                    break
            if n >= cap:
                return times, nodes, -1
            times[n] = t
            nodes[n] = node
            n += 1
            base = node * p
            add = 0.0
            for q in range(p):
                y[base + q] += betas[q]
                add += w[base + q] * betas[q]
            bound = lam_tot + add
        else:
            # Total intensity only decays until the next event, so the
            # rejected value is itself a valid bound.
            bound = lam_tot
    return times, nodes, n


@njit(cache=True)
def _aux_accumulate(times, nodes, betas, d, horizon):
    """One pass over events accumulating per-node channel sums and Gram sums.

    Simultaneous timestamps are grouped: every event in a tie group sees the
    state decayed to the shared time but none of the group's own increments
    (kernels vanish at zero lag).
    """
    n = times.shape[0]
    p = betas.shape[0]
    size = d * p + 1
    y = np.zeros(size)
    y[0] = 1.0
    pend = np.zeros(size)
    chan_sums = np.zeros((d, size))
    gram_sums = np.zeros((d, size, size))
    counts = np.zeros(d, dtype=np.int64)
    t_cur = 0.0
    for m in range(n):
        tm = times[m]
        if tm > t_cur:
            dtm = tm - t_cur
            for q in range(p):
                f = np.exp(-betas[q] * dtm)
                for j in range(d):
                    c = 1 + j * p + q
                    y[c] = (y[c] + pend[c]) * f
                    pend[c] = 0.0
            t_cur = tm
        i = nodes[m]
        counts[i] += 1
        for a in range(size):
            chan_sums[i, a] += y[a]
        for a in range(size):
            ya = y[a]
            if ya != 0.0:
                for b in range(a, size):
                    gram_sums[i, a, b] += ya * y[b]
        base = 1 + i * p
        for q in range(p):
            pend[base + q] += betas[q]
    return chan_sums, gram_sums, counts


@njit(cache=True)
def _conv_matrix(times, nodes, betas, d):
    """Per-event channel values: row m holds every channel evaluated just
    before event m (constant channel first).  Tie groups as in
    ``_aux_accumulate``."""
    n = times.shape[0]
    p = betas.shape[0]
    size = d * p + 1
    out = np.empty((n, size))
    y = np.zeros(size)
    y[0] = 1.0
    pend = np.zeros(size)
    t_cur = 0.0
    for m in range(n):
        tm = times[m]
        if tm > t_cur:
            dtm = tm - t_cur
            for q in range(p):
                f = np.exp(-betas[q] * dtm)
                for j in range(d):
                    c = 1 + j * p + q
                    y[c] = (y[c] + pend[c]) * f
                    pend[c] = 0.0
            t_cur = tm
        for a in range(size):
            out[m, a] = y[a]
        base = 1 + nodes[m] * p
        for q in range(p):
            pend[base + q] += betas[q]
    return out


@njit(cache=True)
def _grid_intensity_moments(times, nodes, betas, theta, step, n_steps):
    """First and second moments of each node's reconstructed intensity on a
    uniform grid (left limits: an event contributes only strictly after its
    time)."""
    n = times.shape[0]
    d = theta.shape[0]
    p = betas.shape[0]
    size = d * p + 1
    y = np.zeros(size)
    y[0] = 1.0
    s1 = np.zeros(d)
    s2 = np.zeros(d)
    t_cur = 0.0
    m = 0
    for s in range(n_steps):
        ts = s * step
        while m < n and times[m] < ts:
            tm = times[m]
            dtm = tm - t_cur
            if dtm > 0.0:
                for q in range(p):
                    f = np.exp(-betas[q] * dtm)
                    for j in range(d):
                        y[1 + j * p + q] *= f
                t_cur = tm
            base = 1 + nodes[m] * p
            for q in range(p):
                y[base + q] += betas[q]
            m += 1
        if ts > t_cur:
            dts = ts - t_cur
            for q in range(p):
                f = np.exp(-betas[q] * dts)
                for j in range(d):
                    y[1 + j * p + q] *= f
            t_cur = ts
        for i in range(d):
            lam = 0.0
            for a in range(size):
                lam += theta[i, a] * y[a]
            s1[i] += lam
            s2[i] += lam * lam
    return s1, s2


@njit(cache=True)
def _grid_conv_gram(times, nodes, betas, d, step, n_steps):
    """Gram sums of the channel-state vector sampled on a uniform grid
    (left limits), constant channel included."""
    n = times.shape[0]
    p = betas.shape[0]
    size = d * p + 1
    y = np.zeros(size)
    y[0] = 1.0
    gram = np.zeros((size, size))
    t_cur = 0.0
    m = 0
    for s in range(n_steps):
        ts = s * step
        while m < n and times[m] < ts:
            tm = times[m]
            dtm = tm - t_cur
            if dtm > 0.0:
                for q in range(p):
                    f = np.exp(-betas[q] * dtm)
                    for j in range(d):
                        y[1 + j * p + q] *= f
                t_cur = tm
            base = 1 + nodes[m] * p
            for q in range(p):
                y[base + q] += betas[q]
            m += 1
        if ts > t_cur:
            dts = ts - t_cur
            for q in range(p):
                f = np.exp(-betas[q] * dts)
                for j in range(d):
                    y[1 + j * p + q] *= f
            t_cur = ts
        for a in range(size):
            ya = y[a]
            if ya != 0.0:
                for b in range(a, size):
                    gram[a, b] += ya * y[b]
    return gram


@njit(cache=True)
def _pair_lag_histogram(times, nodes, d, lag_max, bin_width, n_bins):
    """Counts of ordered event pairs (earlier, later) binned by lag, keyed by
    (later node, earlier node)."""
    n = times.shape[0]
    counts = np.zeros((d, d, n_bins))
    for m in range(n):
        tm = times[m]
        im = nodes[m]
        mp = m - 1
        while mp >= 0:
            lag = tm - times[mp]
            if lag >= lag_max:
                break
            b = int(lag / bin_width)
            if b >= n_bins:
                b = n_bins - 1
            counts[im, nodes[mp], b] += 1.0
            mp -= 1
    return counts
