"""Pure-Python/numpy twins of the compiled kernels in ``_kernels.pyx``.

Floating-point accumulation order matches the compiled loops so both
backends agree bit-for-bit.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def svm_dual_cd(X, y, C: float, max_epochs: int, tol: float, seed: int):
    rows = [list(map(float, r)) for r in np.asarray(X, dtype=np.float64)]
    labels = [float(v) for v in np.asarray(y, dtype=np.float64)]
    n = len(rows)
    d = len(rows[0]) if n else 0
    w = [0.0] * d
    alpha = [0.0] * n
    qii = []
    for r in rows:
        dot = 0.0
        for v in r:
            dot = dot + v * v
        qii.append(dot)
    perm = list(range(n))
    state = int(seed) & _MASK
    epoch = 0
    while epoch < max_epochs:
        epoch += 1
        for k in range(n - 1, 0, -1):
            state, z = _splitmix64(state)
            t = z % (k + 1)
            perm[k], perm[t] = perm[t], perm[k]
        max_pg = -1e300
        min_pg = 1e300
        for i in perm:
            xi = rows[i]
            dot = 0.0
            for j in range(d):
                dot = dot + w[j] * xi[j]
            G = labels[i] * dot - 1.0
            a = alpha[i]
            if a == 0.0:
                PG = G if G < 0.0 else 0.0
            elif a == C:
                PG = G if G > 0.0 else 0.0
            else:
                PG = G
            if PG > max_pg:
                max_pg = PG
            if PG < min_pg:
                min_pg = PG
            if abs(PG) > 1e-12:
                a_new = a - G / qii[i]
                if a_new < 0.0:
                    a_new = 0.0
                if a_new > C:
                    a_new = C
                alpha[i] = a_new
                delta = (a_new - a) * labels[i]
                for j in range(d):
                    w[j] = w[j] + delta * xi[j]
        if max_pg - min_pg < tol:
            break
    return np.array(w, dtype=np.float64), np.array(alpha, dtype=np.float64), epoch


def kendall_pair_counts(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    iu = np.triu_indices(len(x), k=1)
    dx = np.sign(x[:, None] - x[None, :])[iu]
    dy = np.sign(y[:, None] - y[None, :])[iu]
    zx = dx == 0
    zy = dy == 0
    tb = int(np.sum(zx & zy))
    tx = int(np.sum(zx & ~zy))
    ty = int(np.sum(zy & ~zx))
    prod = dx * dy
    return int(np.sum(prod > 0)), int(np.sum(prod < 0)), tx, ty, tb


def weighted_pair_sums(x, y, weights):
    xs = [float(v) for v in x]
    ys = [float(v) for v in y]
    ws = [float(v) for v in weights]
    n = len(xs)
    signed_sum = 0.0
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            w = ws[i] + ws[j]
            total = total + w
            dx = xs[i] - xs[j]
            dy = ys[i] - ys[j]
            if dx == 0.0 or dy == 0.0:
                continue
            if (dx > 0.0) == (dy > 0.0):
                signed_sum = signed_sum + w
            else:
                signed_sum = signed_sum - w
    return signed_sum, total


def signed_rank_null_counts(doubled_ranks):
    ranks = [int(r) for r in doubled_ranks]
    counts = np.zeros(sum(ranks) + 1, dtype=np.float64)
    counts[0] = 1.0
    reach = 0
    for r in ranks:
        reach += r
        # slice add reads the pre-update values, same as the descending loop
        counts[r : reach + 1] = counts[r : reach + 1] + counts[0 : reach + 1 - r]
    return counts
