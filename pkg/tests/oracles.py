"""Independent oracles the tests check the library against.

Every routine here deliberately avoids the code path it validates: the
Riccati solution is a plain fixed-point iteration, the matrix exponential a
scaling-and-squaring Taylor series, the Lyapunov-jump bound a bisection on
PSD checks, hull membership a linear program, and positive semidefiniteness
a shifted Cholesky factorization.
"""

import numpy as np
from scipy.optimize import linprog


def dare_fixed_point(A, B, S, R, iters=20000, tol=1e-14):
    """Fixed-point iteration of the discrete algebraic Riccati equation.

    Returns (P, F) with F the state-feedback gain for u = F x minimizing
    sum x'Sx + u'Ru.
    """
    A = np.asarray(A, float)
    B = np.asarray(B, float).reshape(A.shape[0], -1)
    R = np.atleast_2d(np.asarray(R, float))
    P = np.asarray(S, float).copy()
    for _ in range(iters):
        BtP = B.T @ P
        K = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = S + A.T @ P @ (A - B @ K)
        P_next = 0.5 * (P_next + P_next.T)
        if np.abs(P_next - P).max() <= tol * max(1.0, np.abs(P).max()):
            P = P_next
            break
        P = P_next
    BtP = B.T @ P
    F = -np.linalg.solve(R + BtP @ B, BtP @ A)
    return P, F


def expm_taylor(M):
    """Matrix exponential by scaling and squaring with a Taylor series."""
    M = np.asarray(M, float)
    norm = np.abs(M).sum(axis=1).max()
    squarings = max(0, int(np.ceil(np.log2(max(norm, 1e-300)))) + 1)
    Ms = M / (2.0 ** squarings)
    out = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, 40):
        term = term @ Ms / k
        out = out + term
        if np.abs(term).max() < 1e-18:
            break
    for _ in range(squarings):
        out = out @ out
    return out


def chol_psd(M, eps=0.0):
    """PSD test via Cholesky of M + (eps + tiny_shift) I."""
    M = 0.5 * (M + M.T)
    shift = eps + 1e-12 * max(1.0, np.abs(M).max())
    try:
        np.linalg.cholesky(M + shift * np.eye(M.shape[0]))
        return True
    except np.linalg.LinAlgError:
        return False


def mu_bisection(Qs, lo=1.0, hi=1e9, iters=100):
    """Smallest m with inv(Q_j) <= m * inv(Q_l) for all ordered pairs,
    found by bisection over PSD checks."""
    Ps = [np.linalg.inv(Q) for Q in Qs]

    def feasible(m):
        for j, Pj in enumerate(Ps):
            for l, Pl in enumerate(Ps):
                if j == l:
                    continue
                if not chol_psd(m * Pl - Pj, eps=1e-12):
                    return False
        return True

    if feasible(lo):
        return lo
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


def in_convex_hull(vertex_mats, target, tol=1e-7):
    """LP feasibility: does target lie in the convex hull of the vertices?"""
    V = np.stack([np.asarray(M, float).reshape(-1) for M in vertex_mats], axis=1)
    t = np.asarray(target, float).reshape(-1)
    n = V.shape[1]
    A_eq = np.vstack([V, np.ones((1, n))])
    b_eq = np.concatenate([t, [1.0]])
    res = linprog(np.zeros(n), A_eq=A_eq, b_eq=b_eq, bounds=[(0.0, 1.0)] * n,
                  method="highs")
    if not res.success:
        return False
    return float(np.abs(A_eq @ res.x - b_eq).max()) <= tol


def steady_state_yaw_rate(params, v_x, delta):
    """Steady cornering yaw rate of the linear single-track model.

    Derived from force/moment balance with axle forces 2*C*alpha:
    delta = L/R + a_y * m (lr Cr - lf Cf) / (2 L Cf Cr), a_y = v^2/R.
    """
    L = params.lf + params.lr
    k_us = params.m * (params.lr * params.Cr - params.lf * params.Cf) / (
        2.0 * L * params.Cf * params.Cr)
    return v_x * delta / (L + k_us * v_x ** 2)
