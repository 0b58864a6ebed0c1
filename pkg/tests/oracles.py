"""Independent reference computations used to freeze derived test values.

Nothing here imports the package under test.
"""
from fractions import Fraction
from math import comb

import numpy as np
from scipy import linalg, stats


def binomial_kernel(t: int, y: int) -> float:
    """Simple walk on Z: P(S_t = y) by path counting."""
    if abs(y) > t or (t + y) % 2:
        return 0.0
    return comb(t, (t + y) // 2) / 2**t


def poissonized_return(T: float, kmax: int | None = None) -> float:
    """Rate-1 continuous-time simple walk: P(Y_T = 0) = sum_k Pois(T; k) P(S_k = 0)."""
    kmax = kmax or int(T + 40 * np.sqrt(T) + 60)
    k = np.arange(0, kmax + 1, 2)
    walk = np.exp(stats.binom.logpmf(k // 2, k, 0.5))
    return float(np.sum(stats.poisson.pmf(k, T) * walk))


def cycle_matrix_power(weights: np.ndarray, loops: np.ndarray, t: int, x0: int) -> np.ndarray:
    """Dense P^t applied to delta_x0 on a cycle; weights[i] is edge {i, i+1}."""
    n = len(weights)
    W = np.zeros((n, n))
    for i in range(n):
        W[i, (i + 1) % n] += weights[i]
        W[(i + 1) % n, i] += weights[i]
        W[i, i] += loops[i]
    P = W / W.sum(axis=1, keepdims=True)
    v = np.zeros(n)
    v[x0] = 1.0
    return v @ np.linalg.matrix_power(P, t)


def cycle_vsrw_propagator(tables: np.ndarray, cuts, T: float) -> np.ndarray:
    """Time-ordered product of expm(dt * L_k) for a piecewise schedule on a cycle."""
    n = tables.shape[1]
    edges = [0.0, *cuts, T]
    out = np.eye(n)
    for k, (a, b) in enumerate(zip(edges, edges[1:])):
        w = tables[min(k, len(tables) - 1)]
        L = np.zeros((n, n))
        for i in range(n):
            L[i, (i + 1) % n] += w[i]
            L[(i + 1) % n, i] += w[i]
        L -= np.diag(L.sum(axis=1))
        out = out @ linalg.expm((b - a) * L)
    return out


def zigzag_speed_exact(eps, gamma, gamma_p) -> Fraction:
    """Closed form eps (g' - g)/(g' + g) in rationals."""
    eps, gamma, gamma_p = Fraction(eps), Fraction(gamma), Fraction(gamma_p)
    return eps * (gamma_p - gamma) / (gamma_p + gamma)


def poisson_shift_generator_speed(eps: float, c: float) -> float:
    """Speed from the continuous-time chain of s = (x - k) mod 3.

    A walker jump (rate 1) moves s by +-1; an environment shift (rate c - 1)
    moves s by -1 without displacing the walker.
    """
    LR = [(1 + eps, 1 - eps), (1 - eps, 1.0), (1.0, 1 + eps)]
    G = np.zeros((3, 3))
    for s, (L, R) in enumerate(LR):
        G[s, (s + 1) % 3] += R / (L + R)
        G[s, (s - 1) % 3] += L / (L + R) + (c - 1)
    G -= np.diag(G.sum(axis=1))
    pi = linalg.null_space(G.T)[:, 0]
    pi = pi / pi.sum()
    return float(sum(pi[s] * (R - L) / (L + R) for s, (L, R) in enumerate(LR)))


def halfspace_ball_count(r: int, k0: int = 0) -> int:
    """Lattice points of Z^2 x Z_{>=0} within L1 distance r of (0, 0, k0)."""
    total = 0
    for dk in range(-r, r + 1):
        if k0 + dk < 0:
            continue
        m = r - abs(dk)
        total += 2 * m * m + 2 * m + 1
    return total


def path_segment_gap(n: int) -> float:
    """Smallest nonzero eigenvalue of the unit-weight path Laplacian on n vertices."""
    return 2 * (1 - np.cos(np.pi / n))
