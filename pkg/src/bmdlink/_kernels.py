"""Compiled scalar kernels for the link family and binomial likelihood.

Designs are tiny (a handful of dose groups) and the optimizers call these
millions of times, so per-call overhead dominates; numba removes it.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

G_MAX = 700.0
SERIES_EPS = 1e-3

# phi(z) = f_up(a, v) / v Taylor coefficients; row 0 for a >= 0, row 1 for a < 0
_C = np.array([
    [1.0, 1.0 / 2, 1.0 / 6, 1.0 / 24, 1.0 / 120],
    [1.0, 1.0 / 2, 1.0 / 3, 1.0 / 4, 1.0 / 5],
])


@njit(cache=True)
def branch(a, v):
    """f_up(a, v), df/dv, df/da for v >= 0."""
    z = a * v
    if abs(z) < SERIES_EPS:
        k = 1 if a < 0 else 0
        c1, c2, c3, c4 = _C[k, 1], _C[k, 2], _C[k, 3], _C[k, 4]
        f = v * (1.0 + z * (c1 + z * (c2 + z * c3)))
        f_v = 1.0 + z * (2 * c1 + z * (3 * c2 + z * 4 * c3))
        f_a = v * v * (c1 + z * (2 * c2 + z * (3 * c3 + z * 4 * c4)))
        return f, f_v, f_a
    if a > 0:
        if z > 709.0:
            return math.inf, math.inf, math.inf
        ez = math.exp(z)
        em1 = math.expm1(z)
        return em1 / a, ez, (z * ez - em1) / (a * a)
    l1 = math.log1p(-z)
    return -l1 / a, 1.0 / (1.0 - z), (z / (1.0 - z) + l1) / (a * a)


@njit(cache=True)
def terms(b0, b1, a1, a2, x):
    """G_c, dG_c/d(b0, b1, a1, a2), dG_c/d eta_c and saturation flags."""
    m = x.shape[0]
    g = np.empty(m)
    dg = np.zeros((m, 4))
    slope = np.empty(m)
    sat = np.zeros(m, dtype=np.bool_)
    for i in range(m):
        u = b1 * x[i]
        if u >= 0:
            f, f_v, f_a = branch(a1, u)
            gi = b0 + f
            dg[i, 2] = f_a
        else:
            f, f_v, f_a = branch(a2, -u)
            gi = b0 - f
            dg[i, 3] = -f_a
        slope[i] = f_v
        dg[i, 0] = 1.0
        dg[i, 1] = f_v * x[i]
        if not abs(gi) < G_MAX:
            sat[i] = True
            if gi != gi:
                gi = G_MAX if u >= 0 else -G_MAX
            gi = min(max(gi, -G_MAX), G_MAX)
            for j in range(4):
                dg[i, j] = 0.0
        g[i] = gi
    return g, dg, slope, sat


@njit(cache=True)
def _log_expit(g):
    # log(1 / (1 + exp(-g)))
    if g >= 0:
        return -math.log1p(math.exp(-g))
    return g - math.log1p(math.exp(g))


@njit(cache=True)
def _expit(g):
    if g >= 0:
        return 1.0 / (1.0 + math.exp(-g))
    e = math.exp(g)
    return e / (1.0 + e)


@njit(cache=True)
def loglik(params, x, y, n):
    """Log-likelihood, score (4,), expected information (4, 4), any-saturated flag."""
    g, dg, _, sat = terms(params[0], params[1], params[2], params[3], x)
    ll = 0.0
    grad = np.zeros(4)
    info = np.zeros((4, 4))
    any_sat = False
    for i in range(x.shape[0]):
        gi = g[i]
        ll += y[i] * _log_expit(gi) + (n[i] - y[i]) * _log_expit(-gi)
        r = _expit(gi)
        resid = y[i] - n[i] * r
        w = n[i] * r * (1.0 - r)
        for j in range(4):
            grad[j] += resid * dg[i, j]
            for k in range(4):
                info[j, k] += w * dg[i, j] * dg[i, k]
        if sat[i]:
            any_sat = True
    return ll, grad, info, any_sat


@njit(cache=True)
def fit_beta(a1, a2, b0, b1, x, y, n, beta_max, max_iter):
    """Fisher scoring for (beta0, beta1) at fixed alpha, with step halving."""
    params = np.array([b0, b1, a1, a2])
    ll, grad, info, _ = loglik(params, x, y, n)
    for _ in range(max_iter):
        i00 = info[0, 0] + 1e-12
        i11 = info[1, 1] + 1e-12
        i01 = info[0, 1]
        det = i00 * i11 - i01 * i01
        if not det > 0:
            break
        s0 = (i11 * grad[0] - i01 * grad[1]) / det
        s1 = (i00 * grad[1] - i01 * grad[0]) / det
        t = 1.0
        trial = params.copy()
        accepted = False
        while t >= 1e-6:
            trial[0] = params[0] + t * s0
            trial[1] = params[1] + t * s1
            ll_t, grad_t, info_t, _ = loglik(trial, x, y, n)
            if ll_t >= ll - 1e-12:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        moved = max(abs(trial[0] - params[0]), abs(trial[1] - params[1]))
        params[0] = trial[0]
        params[1] = trial[1]
        ll, grad, info = ll_t, grad_t, info_t
        scale = 1.0 + max(abs(params[0]), abs(params[1]))
        if moved < 1e-11 * scale or scale > beta_max:
            break
    return params, ll, grad


@njit(cache=True)
def inverse_branch(a, t):
    """v >= 0 with f_up(a, v) = t for t >= 0 (inf on overflow)."""
    w = a * t
    if abs(w) < SERIES_EPS:
        if a >= 0:
            return t * (1.0 + w * (-0.5 + w * (1.0 / 3 - w / 4)))
        return t * (1.0 + w * (-0.5 + w * (1.0 / 6 - w / 24)))
    if a > 0:
        return math.log1p(w) / a
    if -w > 709.0:
        return math.inf
    return -math.expm1(-w) / a


@njit(cache=True)
def bmd_centered_many(P, x_min, bmr):
    """Closed-form centered BMD for each row of P; inf if unreachable or beta1 <= 0."""
    m = P.shape[0]
    out = np.empty(m)
    xm = np.array([x_min])
    for k in range(m):
        b0, b1, a1, a2 = P[k, 0], P[k, 1], P[k, 2], P[k, 3]
        if not b1 > 0:
            out[k] = math.inf
            continue
        g, _, _, _ = terms(b0, b1, a1, a2, xm)
        p0 = _expit(g[0])
        if not p0 < 1.0:
            out[k] = math.inf
            continue
        bmre = p0 + (1.0 - p0) * bmr
        lbmr = math.log(bmre) - math.log1p(-bmre)
        t = lbmr - b0
        if t >= 0:
            u = inverse_branch(a1, t)
        else:
            u = -inverse_branch(a2, -t)
        out[k] = u / b1
    return out


@njit(cache=True)
def constrained_intercept(b1, a1, a2, x_min, x_d, T):
    """Closed-form intercept giving extra risk 1 - exp(-T) at x_d.

    Returns (ok, b, db/d(b1, a1, a2)).
    """
    xs = np.array([x_min, x_d])
    g, dg, _, sat = terms(0.0, b1, a1, a2, xs)
    db = np.zeros(3)
    # a background clipped low still has the p0 -> 0 limit; anything else is unusable
    if sat[1] or (sat[0] and g[0] > 0):
        return False, 0.0, db
    excess = g[1] - g[0] - T
    if not excess > 1e-300:
        return False, 0.0, db
    if excess > 700.0:
        log_em = excess
    else:
        log_em = math.log(math.expm1(excess))
    b = math.log(math.expm1(T)) - T - g[0] - log_em
    q = 1.0 / -math.expm1(-excess)
    for j in range(3):
        db[j] = -dg[0, j + 1] - q * (dg[1, j + 1] - dg[0, j + 1])
    return True, b, db


@njit(cache=True)
def constrained_objective(theta, x, y, n, x_min, x_d, T):
    """Negative log-likelihood over (log beta1, alpha1, alpha2) with beta0 eliminated."""
    b1 = math.exp(theta[0])
    ok, b, db = constrained_intercept(b1, theta[1], theta[2], x_min, x_d, T)
    out = np.zeros(3)
    if not ok:
        out[0] = -1.0
        return 1e15, out
    params = np.array([b, b1, theta[1], theta[2]])
    ll, grad, _, _ = loglik(params, x, y, n)
    for j in range(3):
        out[j] = -(grad[j + 1] + grad[0] * db[j])
    out[0] *= b1
    return -ll, out
