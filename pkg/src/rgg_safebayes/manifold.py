"""Candidate 2-D latent geometries.

Each geometry is sampled through an unconstrained chart:

* Euclidean: identity chart on R^2.
* Spherical: any nonzero point of R^3, normalized onto S^2.
* Hyperboloid: x in R^2 lifted to (sqrt(1 + |x|^2), x) on the upper
  sheet of the Lorentz model.

Distances and their chart gradients are provided both for single points
(validated, used by the public API) and in a vectorized, unchecked form
(``pairwise_*``) used by the model kernels.
"""

from __future__ import annotations

import enum

import numpy as np

from .errors import UsageError

__all__ = [
    "DomainError",
    "GeometryKind",
    "TAYLOR_EPS",
    "TOL_FLOOR",
    "chart_dim",
    "embed_chart",
    "geodesic_distance",
    "stable_acosh",
    "distance_gradient_chart",
    "pairwise_distance",
    "pairwise_distance_grad",
    "lorentz_inner",
]

#: Below ``1 + TAYLOR_EPS`` the arccosh is replaced by its Taylor expansion.
TAYLOR_EPS = 1e-7
#: Arguments of ``stable_acosh`` may undershoot 1 by this much.
TOL_FLOOR = 1e-9


class DomainError(UsageError):
    """Input outside the domain of a geometric operation."""


class GeometryKind(str, enum.Enum):
    EUCLIDEAN = "euclidean"
    SPHERICAL = "spherical"
    HYPERBOLOID = "hyperboloid"

    @classmethod
    def parse(cls, value) -> "GeometryKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise DomainError(f"unknown geometry {value!r}") from None

    @property
    def code(self) -> int:
        """Stable integer tag, independent of list ordering."""
        return _CODES[self]


_CODES = {
    GeometryKind.EUCLIDEAN: 0,
    GeometryKind.SPHERICAL: 1,
    GeometryKind.HYPERBOLOID: 2,
}
_CHART_DIM = {
    GeometryKind.EUCLIDEAN: 2,
    GeometryKind.SPHERICAL: 3,
    GeometryKind.HYPERBOLOID: 2,
}


def chart_dim(g) -> int:
    return _CHART_DIM[GeometryKind.parse(g)]


def lorentz_inner(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return -a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def _check_chart(p, g):
    p = np.asarray(p, dtype=float)
    if p.shape != (chart_dim(g),):
        raise DomainError(f"{g.value} chart point must have length {chart_dim(g)}, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise DomainError("chart point has non-finite coordinates")
    if g is GeometryKind.SPHERICAL and not np.any(p):
        raise DomainError("spherical chart point is the zero vector")
    return p


def _check_embedded(z, g):
    z = np.asarray(z, dtype=float)
    n = 2 if g is GeometryKind.EUCLIDEAN else 3
    if z.shape != (n,):
        raise DomainError(f"{g.value} embedded point must have length {n}, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise DomainError("embedded point has non-finite coordinates")
    if g is GeometryKind.SPHERICAL:
        if abs(np.linalg.norm(z) - 1.0) > 1e-12:
            raise DomainError("point is not on the unit sphere")
    elif g is GeometryKind.HYPERBOLOID:
        if z[0] < 1.0 or abs(lorentz_inner(z, z) + 1.0) > 1e-9:
            raise DomainError("point is not on the upper hyperboloid sheet")
    return z


def embed_chart(p, g) -> np.ndarray:
    """Map a chart point to its embedded coordinates."""
    g = GeometryKind.parse(g)
    p = _check_chart(p, g)
    if g is GeometryKind.EUCLIDEAN:
        return p.copy()
    if g is GeometryKind.SPHERICAL:
        return p / np.linalg.norm(p)
    return np.concatenate([[np.sqrt(1.0 + p @ p)], p])


def _acosh1p(eps):
    """arccosh(1 + eps) for eps >= 0, shielded near zero.

    Works elementwise on arrays; eps should already be clamped at 0.
    """
    eps = np.asarray(eps, dtype=float)
    small = eps < TAYLOR_EPS
    # log1p form avoids forming 1 + eps and losing digits of eps
    big = np.log1p(eps + np.sqrt(eps * (2.0 + eps)))
    taylor = np.sqrt(2.0 * eps) * (1.0 - eps / 12.0)
    return np.where(small, taylor, big)


def _acosh1p_deriv(eps):
    """d/d(eps) of ``_acosh1p``; zero at eps == 0 (coincident points)."""
    eps = np.asarray(eps, dtype=float)
    pos = eps > 0
    safe = np.where(pos, eps, 1.0)
    root = np.sqrt(2.0 * safe)
    taylor = (1.0 - safe / 12.0) / root - root / 12.0
    exact = 1.0 / np.sqrt(safe * (2.0 + safe))
    out = np.where(safe < TAYLOR_EPS, taylor, exact)
    return np.where(pos, out, 0.0)


def stable_acosh(s) -> float:
    """arccosh with a two-term Taylor shield just above 1.

    Raises DomainError for ``s < 1 - 1e-9``, which indicates that a
    hyperboloid point has drifted off the sheet.
    """
    s = float(s)
    if not np.isfinite(s) or s < 1.0 - TOL_FLOOR:
        raise DomainError(f"arccosh argument {s!r} below 1")
    eps = max(s - 1.0, 0.0)
    return float(_acosh1p(eps))


def geodesic_distance(a, b, g) -> float:
    """Geodesic distance between two embedded points."""
    g = GeometryKind.parse(g)
    a = _check_embedded(a, g)
    b = _check_embedded(b, g)
    if g is GeometryKind.EUCLIDEAN:
        return float(np.hypot(*(a - b)))
    if g is GeometryKind.SPHERICAL:
        return float(np.arctan2(np.linalg.norm(np.cross(a, b)), a @ b))
    # -<a,b>_L - 1 == <a-b, a-b>_L / 2, which has no cancellation at a == b
    diff = a - b
    eps = 0.5 * lorentz_inner(diff, diff)
    if eps < -TOL_FLOOR:
        raise DomainError("Lorentz product of hyperboloid points below -1")
    return float(_acosh1p(max(eps, 0.0)))


def distance_gradient_chart(a, b, g):
    """Gradients of the geodesic distance with respect to both chart points.

    Returns ``(grad_a, grad_b)``. At coincident points the distance is not
    differentiable and the zero subgradient is returned.
    """
    g = GeometryKind.parse(g)
    a = _check_chart(a, g)
    b = _check_chart(b, g)
    _, ga, gb = pairwise_distance_grad(a[None, :], b[None, :], g)
    return ga[0], gb[0]


# ---------------------------------------------------------------------------
# vectorized kernels over rows of chart coordinates (no validation)


def pairwise_distance(xa, xb, g):
    """Row-wise geodesic distances between chart arrays of shape (m, D)."""
    return _pairwise(xa, xb, GeometryKind.parse(g), grad=False)[0]


def pairwise_distance_grad(xa, xb, g):
    """Row-wise distances and their chart gradients ``(d, dd/dxa, dd/dxb)``."""
    return _pairwise(xa, xb, GeometryKind.parse(g), grad=True)


def _pairwise(xa, xb, g, grad):
    if g is GeometryKind.EUCLIDEAN:
        diff = xa - xb
        d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        if not grad:
            return d, None, None
        inv = np.divide(1.0, d, out=np.zeros_like(d), where=d > 0)
        ga = diff * inv[:, None]
        return d, ga, -ga

    if g is GeometryKind.SPHERICAL:
        na = np.sqrt(np.einsum("ij,ij->i", xa, xa))
        nb = np.sqrt(np.einsum("ij,ij->i", xb, xb))
        u = xa / na[:, None]
        v = xb / nb[:, None]
        c = np.einsum("ij,ij->i", u, v)
        sin = np.linalg.norm(np.cross(u, v), axis=1)
        d = np.arctan2(sin, c)
        if not grad:
            return d, None, None
        inv = np.divide(1.0, sin, out=np.zeros_like(sin), where=sin > 0)
        # tangent components of the other point, pulled back through normalization
        ga = -(v - c[:, None] * u) * (inv / na)[:, None]
        gb = -(u - c[:, None] * v) * (inv / nb)[:, None]
        return d, ga, gb

    # hyperboloid, chart x -> (sqrt(1+|x|^2), x)
    a0 = np.sqrt(1.0 + np.einsum("ij,ij->i", xa, xa))
    b0 = np.sqrt(1.0 + np.einsum("ij,ij->i", xb, xb))
    diff = xa - xb
    # a0 - b0 without cancellation
    d0 = np.einsum("ij,ij->i", diff, xa + xb) / (a0 + b0)
    eps = np.maximum(0.5 * (np.einsum("ij,ij->i", diff, diff) - d0 * d0), 0.0)
    d = _acosh1p(eps)
    if not grad:
        return d, None, None
    k = _acosh1p_deriv(eps)
    ga = (diff - (d0 / a0)[:, None] * xa) * k[:, None]
    gb = (-diff + (d0 / b0)[:, None] * xb) * k[:, None]
    return d, ga, gb
