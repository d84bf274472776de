"""Compiled inner loops: Gram-Schmidt, LLL and Fincke-Pohst enumeration.

Everything here works on raw float64 / int64 arrays so that numba can
compile it; the typed wrappers live in :mod:`unipotent_evl.lattice`.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def gram_schmidt(B):
    n = B.shape[0]
    mu = np.zeros((n, n))
    bstar = np.zeros((n, n))
    bsq = np.zeros(n)
    for i in range(n):
        v = B[i].copy()
        for j in range(i):
            mu[i, j] = np.dot(B[i], bstar[j]) / bsq[j]
            v -= mu[i, j] * bstar[j]
        bstar[i] = v
        bsq[i] = np.dot(v, v)
        mu[i, i] = 1.0
    return mu, bstar, bsq


@njit(cache=True)
def lll_reduce_kernel(B, delta, max_iter):
    """LLL-reduce the rows of ``B`` in place.

    Returns ``(T, status)`` with ``T @ B_in == B_out`` and ``status`` equal to
    0 on success, 1 if ``max_iter`` swaps were exhausted.
    """
    n = B.shape[0]
    T = np.eye(n, dtype=np.int64)
    if n < 2:
        return T, 0
    k = 1
    it = 0
    while k < n:
        it += 1
        if it > max_iter:
            return T, 1
        # size reduction; repeated because float rounding can leave |mu| > 1/2
        for _rep in range(4):
            mu, bstar, bsq = gram_schmidt(B)
            changed = False
            for j in range(k - 1, -1, -1):
                q = np.floor(mu[k, j] + 0.5)
                if q != 0.0:
                    changed = True
                    B[k] -= q * B[j]
                    T[k] -= np.int64(q) * T[j]
                    for l in range(j + 1):
                        mu[k, l] -= q * mu[j, l]
            if not changed:
                break
        mu, bstar, bsq = gram_schmidt(B)
        if bsq[k] >= (delta - mu[k, k - 1] ** 2) * bsq[k - 1]:
            k += 1
        else:
            for c in range(n):
                tmp = B[k, c]
                B[k, c] = B[k - 1, c]
                B[k - 1, c] = tmp
                ti = T[k, c]
                T[k, c] = T[k - 1, c]
                T[k - 1, c] = ti
            k = max(k - 1, 1)
    return T, 0


@njit(cache=True)
def enumerate_ball_kernel(B, center, radius, node_cap, out):
    """All integer ``u`` with ``|u @ B - center|_2 <= radius``.

    Rows of ``B`` should be LLL-reduced for efficiency. Found coefficient
    vectors are written to ``out`` until it is full; the return value is
    ``(count, nodes)`` where ``count`` may exceed ``len(out)`` (caller retries
    with a larger buffer) and ``nodes == -1`` signals that ``node_cap``
    was hit.
    """
    n = B.shape[0]
    mu, bstar, bsq = gram_schmidt(B)
    tau = np.empty(n)
    for i in range(n):
        tau[i] = np.dot(center, bstar[i]) / bsq[i]
    r2 = radius * radius
    u = np.zeros(n, dtype=np.int64)
    upper = np.zeros(n, dtype=np.int64)
    ctr = np.zeros(n)
    partial = np.zeros(n + 1)
    count = 0
    nodes = 0
    cap = out.shape[0]

    i = n - 1
    ctr[i] = tau[i]
    rad = math.sqrt(max(r2, 0.0) / bsq[i])
    u[i] = np.int64(math.ceil(ctr[i] - rad))
    upper[i] = np.int64(math.floor(ctr[i] + rad))
    while True:
        if u[i] > upper[i]:
            i += 1
            if i == n:
                break
            u[i] += 1
            continue
        nodes += 1
        if nodes > node_cap:
            return count, -1
        diff = u[i] - ctr[i]
        d = partial[i + 1] + bsq[i] * diff * diff
        if d > r2:
            u[i] += 1
            continue
        if i == 0:
            if count < cap:
                for c in range(n):
                    out[count, c] = u[c]
            count += 1
            u[0] += 1
            continue
        partial[i] = d
        i -= 1
        s = tau[i]
        for j in range(i + 1, n):
            s -= u[j] * mu[j, i]
        ctr[i] = s
        rad = math.sqrt(max(r2 - partial[i + 1], 0.0) / bsq[i])
        u[i] = np.int64(math.ceil(ctr[i] - rad))
        upper[i] = np.int64(math.floor(ctr[i] + rad))
    return count, nodes
