"""Independent reference computations used only by the tests.

None of these share code with the package solvers: they use plain loops,
dense eigensolvers, scipy's stiff ODE integrator and brute-force enumeration.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.integrate import solve_ivp


def loop_rate_matrix(rates, p1, p2):
    n = rates.shape[0]
    G = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            total = 0.0
            for a in range(rates.shape[2]):
                for b in range(rates.shape[3]):
                    total += p1[i, a] * p2[i, b] * rates[i, j, a, b]
            G[i, j] = total
    return G


def loop_matvec(G, f):
    out = []
    for row in G:
        s = 0.0
        for g, x in zip(row, f):
            s += g * x
        out.append(s)
    return np.array(out)


def brute_lyapunov(rates, W, b, delta, C):
    """Worst margin of the drift inequality by explicit loops over states and pure pairs."""
    n, _, A1, A2 = rates.shape
    worst = np.inf
    for i in range(n):
        for a in range(A1):
            for c in range(A2):
                drift = sum(rates[i, j, a, c] * W[j] for j in range(n))
                rhs = -2 * delta * W[i] + (b if i in C else 0.0)
                worst = min(worst, rhs - drift)
    return worst


def dense_perron(G, c, theta):
    """Largest real eigenvalue of G + theta diag(c) via a dense eigensolver."""
    A = np.asarray(G) + theta * np.diag(c)
    w = np.linalg.eigvals(A)
    return float(np.max(w.real))


def stationary_distribution(G):
    n = len(G)
    M = np.vstack([G.T, np.ones(n)])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    mu, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    return mu


def pure_policies(n_states, n_actions):
    for act in itertools.product(range(n_actions), repeat=n_states):
        yield np.array(act)


def one_hot(act, n_actions):
    out = np.zeros((len(act), n_actions))
    out[np.arange(len(act)), act] = 1.0
    return out


def ode_value(G, c, alpha, theta, rtol=1e-12, atol=1e-14):
    """psi(theta) for a fixed generator and cost via a stiff solver in theta.

    Starts from the series ``1 + t phi0 + t^2 phi2`` at a tiny t.
    """
    n = len(G)
    phi0 = np.linalg.solve(alpha * np.eye(n) - G, c)
    phi2 = np.linalg.solve(2 * alpha * np.eye(n) - G, c * phi0)
    phi3 = np.linalg.solve(3 * alpha * np.eye(n) - G, c * phi2)
    t0 = 1e-4 * min(1.0, alpha)
    y0 = 1 + t0 * phi0 + t0**2 * phi2 + t0**3 * phi3

    def rhs(t, y):
        return (G @ y + t * c * y) / (alpha * t)

    sol = solve_ivp(rhs, (t0, theta), y0, method="Radau", rtol=rtol, atol=atol)
    return sol.y[:, -1]


def support_enumeration(A, B, tol=1e-12):
    """All equilibria of the cost bimatrix game (both players minimize).

    Returns a list of (p, q, cost1, cost2).
    """
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    m, n = A.shape
    out = []
    for k in range(1, min(m, n) + 1):
        for I in itertools.combinations(range(m), k):
            for J in itertools.combinations(range(n), k):
                q = _indifferent(A[np.ix_(I, J)])
                p = _indifferent(B[np.ix_(I, J)].T)
                if q is None or p is None:
                    continue
                P = np.zeros(m)
                Q = np.zeros(n)
                P[list(I)] = p
                Q[list(J)] = q
                c1 = A @ Q
                c2 = P @ B
                v1 = P @ c1
                v2 = c2 @ Q
                if c1.min() < v1 - 1e-10 or c2.min() < v2 - 1e-10:
                    continue
                out.append((P, Q, float(v1), float(v2)))
    return out


def _indifferent(M):
    """Mixture x >= 0 summing to 1 with M x constant, or None."""
    k = M.shape[0]
    lhs = np.zeros((k + 1, k + 1))
    lhs[:k, :k] = M
    lhs[:k, k] = -1.0
    lhs[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    try:
        sol = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError:
        return None
    x = sol[:k]
    if np.any(x < -1e-12):
        return None
    return np.clip(x, 0, None)
