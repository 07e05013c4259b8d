"""Fused numba loops for the masked log-likelihood and its gradient.

Numerically these mirror ``manifold._pairwise`` and the numpy path of
``model.EtaPosterior``; the test-suite checks one against the other.
"""

import math

import numpy as np
from numba import njit

from .manifold import TAYLOR_EPS

EUCLIDEAN, SPHERICAL, HYPERBOLOID = 0, 1, 2
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@njit(cache=True)
def _acosh1p(eps):
    if eps < TAYLOR_EPS:
        return math.sqrt(2.0 * eps) * (1.0 - eps / 12.0)
    return math.log1p(eps + math.sqrt(eps * (2.0 + eps)))


@njit(cache=True)
def _acosh1p_deriv(eps):
    if eps <= 0.0:
        return 0.0
    if eps < TAYLOR_EPS:
        root = math.sqrt(2.0 * eps)
        return (1.0 - eps / 12.0) / root - root / 12.0
    return 1.0 / math.sqrt(eps * (2.0 + eps))


@njit(cache=True)
def loglik_grad(z, r, ii, jj, sign, alpha, eta, geom, grad_z):
    """Add eta * d(loglik)/dz into ``grad_z``; return (loglik, d(loglik)/d(rho)).

    The returned log-likelihood is untempered, the rho-derivative is tempered.
    """
    n, dim = z.shape
    m = ii.shape[0]
    ll = 0.0
    drho = 0.0
    # per-node auxiliaries: hyperboloid time coordinate or sphere norm
    aux = np.empty(n)
    if geom == HYPERBOLOID:
        for p in range(n):
            aux[p] = math.sqrt(1.0 + z[p, 0] * z[p, 0] + z[p, 1] * z[p, 1])
    elif geom == SPHERICAL:
        for p in range(n):
            aux[p] = math.sqrt(z[p, 0] * z[p, 0] + z[p, 1] * z[p, 1] + z[p, 2] * z[p, 2])
    ga = np.empty(dim)
    gb = np.empty(dim)
    for k in range(m):
        i = ii[k]
        j = jj[k]
        if geom == EUCLIDEAN:
            dx0 = z[i, 0] - z[j, 0]
            dx1 = z[i, 1] - z[j, 1]
            d = math.sqrt(dx0 * dx0 + dx1 * dx1)
            inv = 1.0 / d if d > 0.0 else 0.0
            ga[0] = dx0 * inv
            ga[1] = dx1 * inv
            gb[0] = -ga[0]
            gb[1] = -ga[1]
        elif geom == SPHERICAL:
            na = aux[i]
            nb = aux[j]
            u0 = z[i, 0] / na
            u1 = z[i, 1] / na
            u2 = z[i, 2] / na
            v0 = z[j, 0] / nb
            v1 = z[j, 1] / nb
            v2 = z[j, 2] / nb
            c = u0 * v0 + u1 * v1 + u2 * v2
            c0 = u1 * v2 - u2 * v1
            c1 = u2 * v0 - u0 * v2
            c2 = u0 * v1 - u1 * v0
            s = math.sqrt(c0 * c0 + c1 * c1 + c2 * c2)
            d = math.atan2(s, c)
            inv = 1.0 / s if s > 0.0 else 0.0
            ga[0] = -(v0 - c * u0) * inv / na
            ga[1] = -(v1 - c * u1) * inv / na
            ga[2] = -(v2 - c * u2) * inv / na
            gb[0] = -(u0 - c * v0) * inv / nb
            gb[1] = -(u1 - c * v1) * inv / nb
            gb[2] = -(u2 - c * v2) * inv / nb
        else:
            a0 = aux[i]
            b0 = aux[j]
            dx0 = z[i, 0] - z[j, 0]
            dx1 = z[i, 1] - z[j, 1]
            d0 = (dx0 * (z[i, 0] + z[j, 0]) + dx1 * (z[i, 1] + z[j, 1])) / (a0 + b0)
            eps = 0.5 * (dx0 * dx0 + dx1 * dx1 - d0 * d0)
            if eps < 0.0:
                eps = 0.0
            d = _acosh1p(eps)
            kk = _acosh1p_deriv(eps)
            ga[0] = (dx0 - d0 / a0 * z[i, 0]) * kk
            ga[1] = (dx1 - d0 / a0 * z[i, 1]) * kk
            gb[0] = (-dx0 + d0 / b0 * z[j, 0]) * kk
            gb[1] = (-dx1 + d0 / b0 * z[j, 1]) * kk
        sx = sign[k] * alpha * (r - d)
        # one exp serves both log s(sx) and s(-sx)
        e = math.exp(-abs(sx))
        # log(1 + e) rather than log1p: e <= 1, so only absolute error matters
        if sx >= 0.0:
            ll -= math.log(1.0 + e)
            dx = eta * sign[k] * e / (1.0 + e)
        else:
            ll += sx - math.log(1.0 + e)
            dx = eta * sign[k] / (1.0 + e)
        drho += dx
        w = -alpha * dx
        for q in range(dim):
            grad_z[i, q] += w * ga[q]
            grad_z[j, q] += w * gb[q]
    return ll, alpha * r * drho


@njit(cache=True)
def logp_grad(theta, n, dim, ii, jj, sign, alpha, eta, geom, z_scale, r_scale, grad):
    """Tempered log-posterior on the flat vector (z.ravel(), rho); fills ``grad``."""
    z = theta[:-1].reshape(n, dim)
    rho = theta[-1]
    r = math.exp(rho)
    inv_s2 = 1.0 / (z_scale * z_scale)
    sq = 0.0
    for p in range(n * dim):
        sq += theta[p] * theta[p]
        grad[p] = -theta[p] * inv_s2
    rr = r / r_scale
    lp = (
        -0.5 * sq * inv_s2
        - n * dim * (math.log(z_scale) + LOG_SQRT_2PI)
        + math.log(2.0) - math.log(r_scale) - LOG_SQRT_2PI - 0.5 * rr * rr + rho
    )
    g_rho = 1.0 - rr * rr
    if eta != 0.0 and ii.shape[0] > 0:
        ll, drho = loglik_grad(z, r, ii, jj, sign, alpha, eta, geom, grad[:-1].reshape(n, dim))
        lp += eta * ll
        g_rho += drho
    grad[-1] = g_rho
    return lp
