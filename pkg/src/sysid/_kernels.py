"""Hot loops with a numba implementation and a pure-numpy fallback.

The backend is chosen once at import time. Set ``SYSID_BACKEND=numpy`` to
force the fallback, ``SYSID_BACKEND=numba`` to require numba. Both
implementations of every kernel stay importable under ``*_numba`` /
``*_numpy`` names so tests and the benchmark can compare them directly.

Slot segments used by the covariance kernel:
    0: repeated initial state, 1: observation-noise difference,
    2: process-noise difference, 3: process noise plus offset.
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    _HAVE_NUMBA = False

_requested = os.environ.get("SYSID_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise ImportError(f"SYSID_BACKEND must be 'numba' or 'numpy', got {_requested!r}")
if _requested == "numba" and not _HAVE_NUMBA:
    raise ImportError("SYSID_BACKEND=numba but numba is not installed")
BACKEND = "numpy" if (_requested == "numpy" or not _HAVE_NUMBA) else "numba"


def _njit(fn):
    if _HAVE_NUMBA:
        return numba.njit(cache=True, nogil=True)(fn)
    return fn


# --------------------------------------------------------------------------
# state recurrence x(t+1) = A x(t) + a + f(t)

def _propagate_loop(A, a, x1, f, limit):
    trials, p, n = f.shape
    x = np.empty((trials, p, n))
    bad = 0
    for tr in range(trials):
        for i in range(n):
            x[tr, 0, i] = x1[tr, i]
            v = x1[tr, i]
            if not (abs(v) <= limit):
                bad = 1
        for t in range(1, p):
            for i in range(n):
                acc = a[tr, i] + f[tr, t - 1, i]
                for j in range(n):
                    acc += A[i, j] * x[tr, t - 1, j]
                x[tr, t, i] = acc
                if not (abs(acc) <= limit):
                    if bad == 0 or t + 1 < bad:
                        bad = t + 1
    return x, bad


propagate_numba = _njit(_propagate_loop)


def propagate_numpy(A, a, x1, f, limit):
    trials, p, n = f.shape
    x = np.empty((trials, p, n))
    x[:, 0] = x1
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, p):
            x[:, t] = x[:, t - 1] @ A.T + a + f[:, t - 1]
        ok = np.abs(x) <= limit
    bad_steps = np.nonzero(~ok.all(axis=(0, 2)))[0]
    return x, (int(bad_steps[0]) + 1 if bad_steps.size else 0)


def propagate(A, a, x1, f, limit):
    """Run the recurrence for a batch of trials.

    Shapes: A (n, n), a and x1 (T, n), f (T, p, n) with row t-1 holding f(t).
    Returns the states (T, p, n) and the first 1-based step whose state is
    non-finite or exceeds ``limit`` (0 when all are fine).
    """
    args = (np.ascontiguousarray(A, dtype=float), np.ascontiguousarray(a, dtype=float),
            np.ascontiguousarray(x1, dtype=float), np.ascontiguousarray(f, dtype=float),
            float(limit))
    if BACKEND == "numba":
        return propagate_numba(*args)
    return propagate_numpy(*args)


# --------------------------------------------------------------------------
# scalar covariance of the stacked noise vector, assembled from case rules

def _scalar_cov_loop(seg, pm, pq, idx, s_i, s_o, s_p, s_a):
    nn = seg.shape[0]
    C = np.zeros((nn, nn))
    for r in range(nn):
        for c in range(nn):
            g1 = seg[r]
            g2 = seg[c]
            v = 0.0
            if g1 == 0 and g2 == 0:
                v = s_i
            elif g1 == 1 and g2 == 1:
                v = s_o * ((pm[r] == pm[c]) + (pq[r] == pq[c])
                           - (pm[r] == pq[c]) - (pq[r] == pm[c]))
            elif g1 == 2 and g2 == 2:
                t1 = pm[r] - 1 - idx[r]
                u1 = pq[r] - 1 - idx[r]
                t2 = pm[c] - 1 - idx[c]
                u2 = pq[c] - 1 - idx[c]
                v = s_p * ((t1 == t2) - (t1 == u2) - (u1 == t2) + (u1 == u2))
            elif g1 == 3 and g2 == 3:
                v = s_p * ((pq[r] - pm[r] - idx[r]) == (pq[c] - pm[c] - idx[c])) + s_a
            elif (g1 == 2 and g2 == 3) or (g1 == 3 and g2 == 2):
                b = r if g1 == 2 else c
                t = c if g1 == 2 else r
                tau = pq[t] - pm[t] - idx[t]
                v = s_p * ((pm[b] - 1 - idx[b] == tau) - (pq[b] - 1 - idx[b] == tau))
            C[r, c] = v
    return C


scalar_cov_numba = _njit(_scalar_cov_loop)


def scalar_cov_numpy(seg, pm, pq, idx, s_i, s_o, s_p, s_a):
    nn = seg.shape[0]
    C = np.zeros((nn, nn))

    def eq(u, v):
        return (u[:, None] == v[None, :]).astype(float)

    sx = np.nonzero(seg == 0)[0]
    sw = np.nonzero(seg == 1)[0]
    sb = np.nonzero(seg == 2)[0]
    st = np.nonzero(seg == 3)[0]
    C[np.ix_(sx, sx)] = s_i
    m, q = pm[sw], pq[sw]
    C[np.ix_(sw, sw)] = s_o * (eq(m, m) + eq(q, q) - eq(m, q) - eq(q, m))
    t, u = pm[sb] - 1 - idx[sb], pq[sb] - 1 - idx[sb]
    C[np.ix_(sb, sb)] = s_p * (eq(t, t) - eq(t, u) - eq(u, t) + eq(u, u))
    tau = pq[st] - pm[st] - idx[st]
    C[np.ix_(st, st)] = s_p * eq(tau, tau) + s_a
    cross = s_p * (eq(t, tau) - eq(u, tau))
    C[np.ix_(sb, st)] = cross
    C[np.ix_(st, sb)] = cross.T
    return C


def scalar_cov(seg, pm, pq, idx, s_i, s_o, s_p, s_a):
    """Scalar covariance of the stacked noise slots (one coordinate)."""
    args = (np.ascontiguousarray(seg, dtype=np.int64), np.ascontiguousarray(pm, dtype=np.int64),
            np.ascontiguousarray(pq, dtype=np.int64), np.ascontiguousarray(idx, dtype=np.int64),
            float(s_i), float(s_o), float(s_p), float(s_a))
    if BACKEND == "numba":
        return scalar_cov_numba(*args)
    return scalar_cov_numpy(*args)


# --------------------------------------------------------------------------
# Gram of the loading from primitive noise terms onto the stacked slots.
# Primitive columns: 0 -> x(1), 1 -> a, 2 + (t-1) -> w(t), 2 + P + (t-1) -> f(t).

def _loading_gram_loop(ms, qs, P):
    d = 2 + 2 * P
    G = np.zeros((d, d))
    fo = 2 + P
    for j in range(ms.shape[0]):
        m = ms[j]
        q = qs[j]
        G[0, 0] += 1.0
        i1 = 2 + m - 1
        i2 = 2 + q - 1
        G[i1, i1] += 1.0
        G[i2, i2] += 1.0
        G[i1, i2] -= 1.0
        G[i2, i1] -= 1.0
        for s in range(m - 1):
            i1 = fo + (m - 1 - s) - 1
            i2 = fo + (q - 1 - s) - 1
            G[i1, i1] += 1.0
            G[i2, i2] += 1.0
            G[i1, i2] -= 1.0
            G[i2, i1] -= 1.0
        for u in range(q - m):
            i1 = fo + (q - m - u) - 1
            G[i1, i1] += 1.0
            G[1, 1] += 1.0
            G[i1, 1] += 1.0
            G[1, i1] += 1.0
    return G


loading_gram_numba = _njit(_loading_gram_loop)


def loading_gram_numpy(ms, qs, P):
    d = 2 + 2 * P
    fo = 2 + P
    rows_plus, rows_minus = [], []
    # x(1) contributes a single unit entry per pair
    n_pairs = ms.shape[0]
    G = np.zeros((d, d))
    G[0, 0] = n_pairs
    rows_plus.append(2 + ms - 1)
    rows_minus.append(2 + qs - 1)
    if n_pairs:
        s_counts = ms - 1
        rep = np.repeat(np.arange(n_pairs), s_counts)
        offs = np.arange(rep.size) - np.repeat(np.cumsum(s_counts) - s_counts, s_counts)
        rows_plus.append(fo + ms[rep] - 1 - offs - 1)
        rows_minus.append(fo + qs[rep] - 1 - offs - 1)
    plus = np.concatenate(rows_plus)
    minus = np.concatenate(rows_minus)
    np.add.at(G, (plus, plus), 1.0)
    np.add.at(G, (minus, minus), 1.0)
    np.add.at(G, (plus, minus), -1.0)
    np.add.at(G, (minus, plus), -1.0)
    if n_pairs:
        u_counts = qs - ms
        rep = np.repeat(np.arange(n_pairs), u_counts)
        offs = np.arange(rep.size) - np.repeat(np.cumsum(u_counts) - u_counts, u_counts)
        col = fo + (qs[rep] - ms[rep] - offs) - 1
        np.add.at(G, (col, col), 1.0)
        np.add.at(G, (col, np.ones_like(col)), 1.0)
        np.add.at(G, (np.ones_like(col), col), 1.0)
        G[1, 1] += col.size
    return G


def loading_gram(ms, qs, P):
    """Gram matrix L^T L of the primitive-to-slot loading (one coordinate)."""
    args = (np.ascontiguousarray(ms, dtype=np.int64), np.ascontiguousarray(qs, dtype=np.int64), int(P))
    if BACKEND == "numba":
        return loading_gram_numba(*args)
    return loading_gram_numpy(*args)
