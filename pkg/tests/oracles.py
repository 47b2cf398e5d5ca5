"""
Reference implementations used to check the package.

Each oracle is written from the textbook formula with plain loops or dense
linear algebra and shares no code with ``irmap``.
"""

import math

import numpy as np


def ns_rate(beta0, beta1, beta2, lam, tau):
    x = lam * tau
    load1 = (1.0 - math.exp(-x)) / x
    return beta0 + beta1 * load1 + beta2 * (load1 - math.exp(-x))


def idw(points, values, query, power=2.0):
    num = den = 0.0
    for p, z in zip(points, values):
        d = math.dist(p, query)
        if d == 0.0:
            return float(z)
        w = d ** -power
        num += w * z
        den += w
    return num / den


def semivariance(shape, nugget, sill, rng, h):
    """Scalar variogram value straight from the piecewise definitions."""
    if h == 0.0:
        return 0.0
    if shape == "pure_nugget":
        return nugget
    r = h / rng
    if shape == "spherical":
        part = 1.0 if h >= rng else 1.5 * r - 0.5 * r ** 3
    elif shape == "exponential":
        part = 1.0 - math.exp(-3.0 * r)
    elif shape == "gaussian":
        part = 1.0 - math.exp(-3.0 * r * r)
    else:
        raise ValueError(shape)
    return nugget + sill * part


def ordinary_kriging(points, values, query, shape, nugget, sill, rng):
    """Weights, Lagrange multiplier, estimate and variance from one dense solve."""
    n = len(points)
    A = np.ones((n + 1, n + 1))
    A[n, n] = 0.0
    for i in range(n):
        for j in range(n):
            A[i, j] = semivariance(shape, nugget, sill, rng, math.dist(points[i], points[j]))
    g = np.ones(n + 1)
    for i in range(n):
        g[i] = semivariance(shape, nugget, sill, rng, math.dist(points[i], query))
    sol = np.linalg.solve(A, g)
    w, mu = sol[:n], sol[n]
    return w, mu, float(w @ values), float(w @ g[:n] + mu)


def _project(a, c):
    """Euclidean projection onto {0 <= a <= c, sum(alpha) = sum(alpha*)}.

    ``a`` stacks alpha then alpha*. With constraint row ``s = (1, -1)`` the
    projection is ``clip(a - t s)`` at the root ``t`` of a piecewise-linear,
    non-increasing residual, located exactly between its breakpoints.
    """
    n = len(a) // 2
    s = np.r_[np.ones(n), -np.ones(n)]
    knots = np.unique(np.r_[a * s, (a - c) * s])  # where a - t s hits 0 or c
    vals = np.clip(a[None, :] - knots[:, None] * s[None, :], 0.0, c) @ s
    if vals[0] <= 0:
        t = knots[0]
    elif vals[-1] >= 0:
        t = knots[-1]
    else:
        k = int(np.flatnonzero(vals < 0)[0])
        t0, t1, v0, v1 = knots[k - 1], knots[k], vals[k - 1], vals[k]
        t = t0 + v0 * (t1 - t0) / (v0 - v1)
    return np.clip(a - t * s, 0.0, c)


def svr_dual(K, y, c, epsilon, iterations=5000):
    """Accelerated projected gradient on the stacked epsilon-SVR dual.

    Minimises ``1/2 b^T K b + eps sum(alpha + alpha*) - y^T b`` with
    ``b = alpha - alpha*``; returns ``(beta, maximised dual objective)``.
    """
    n = len(y)
    H = np.block([[K, -K], [-K, K]])
    lin = np.r_[epsilon - y, epsilon + y]
    step = 1.0 / np.linalg.eigvalsh(H)[-1]

    def f(a):
        return 0.5 * a @ H @ a + lin @ a

    a = np.zeros(2 * n)
    z, t = a.copy(), 1.0
    for k in range(iterations):
        # stationary once a projected gradient step from ``a`` no longer moves it
        if k % 50 == 0 and np.max(np.abs(_project(a - step * (H @ a + lin), c) - a)) < 1e-10:
            break
        a_next = _project(z - step * (H @ z + lin), c)
        t_next = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        if f(a_next) > f(a):  # adaptive restart
            z, t = a.copy(), 1.0
            continue
        z = a_next + ((t - 1) / t_next) * (a_next - a)
        a, t = a_next, t_next
    beta = a[:n] - a[n:]
    return beta, float(-f(a))


def gaussian_gram(X, sigma):
    n = len(X)
    K = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            K[i, j] = math.exp(-math.dist(X[i], X[j]) ** 2 / (2 * sigma * sigma))
    return K


def central_difference(loss, params, h=1e-6):
    """Central-difference gradient of ``loss()`` over a list of arrays mutated in place."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss()
            p[idx] = old - h
            down = loss()
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads
