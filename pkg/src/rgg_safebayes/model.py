"""Soft-threshold RGG likelihood and the tempered (eta) posterior.

Dyads (i, j), i < j, are indexed in row-major upper-triangular order,
the same order as ``numpy.triu_indices(n, 1)``. Labels, masks and
predictions all share that indexing.

The unconstrained parameter vector used by the sampler is
``concatenate([z_chart.ravel(), [rho]])`` with ``r = exp(rho)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from . import _kernels
from .errors import NumericalError, UsageError
from .manifold import GeometryKind, chart_dim, pairwise_distance, pairwise_distance_grad

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class DyadData:
    """Binary labels for every unordered node pair of an undirected graph."""

    n_nodes: int
    labels: np.ndarray

    def __post_init__(self):
        if self.n_nodes < 2:
            raise UsageError("need at least two nodes")
        labels = np.asarray(self.labels)
        if labels.shape != (n_dyads(self.n_nodes),):
            raise UsageError(
                f"expected {n_dyads(self.n_nodes)} dyad labels for {self.n_nodes} nodes, got {labels.shape}"
            )
        if not np.all((labels == 0) | (labels == 1)):
            raise UsageError("dyad labels must be 0 or 1")
        labels = labels.astype(np.int8)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_edges(cls, n_nodes, edges):
        """Build from 0-based ``(i, j)`` pairs; order, duplicates and loops ignored."""
        labels = np.zeros(n_dyads(n_nodes), dtype=np.int8)
        for i, j in edges:
            if i == j:
                continue
            labels[dyad_index(n_nodes, i, j)] = 1
        return cls(n_nodes, labels)

    @classmethod
    def from_adjacency(cls, adj):
        adj = np.asarray(adj)
        n = adj.shape[0]
        iu, ju = np.triu_indices(n, 1)
        return cls(n, (adj[iu, ju] != 0).astype(np.int8))

    @property
    def n_dyads(self):
        return self.labels.size

    @property
    def n_edges(self):
        return int(self.labels.sum())

    @property
    def density(self):
        return self.n_edges / self.n_dyads

    def pairs(self):
        """Row and column index arrays of all dyads."""
        return np.triu_indices(self.n_nodes, 1)

    def edges(self):
        iu, ju = self.pairs()
        sel = self.labels == 1
        return list(zip(iu[sel].tolist(), ju[sel].tolist()))

    def adjacency(self):
        adj = np.zeros((self.n_nodes, self.n_nodes), dtype=np.int8)
        iu, ju = self.pairs()
        adj[iu, ju] = self.labels
        adj[ju, iu] = self.labels
        return adj

    def __eq__(self, other):
        if not isinstance(other, DyadData):
            return NotImplemented
        return self.n_nodes == other.n_nodes and np.array_equal(self.labels, other.labels)

    def __hash__(self):
        return hash((self.n_nodes, self.labels.tobytes()))


def n_dyads(n_nodes):
    return n_nodes * (n_nodes - 1) // 2


def dyad_index(n_nodes, i, j):
    """Position of the unordered pair {i, j} (0-based) in dyad order."""
    if i > j:
        i, j = j, i
    if not 0 <= i < j < n_nodes:
        raise UsageError(f"invalid dyad ({i}, {j}) for {n_nodes} nodes")
    return i * n_nodes - i * (i + 1) // 2 + (j - i - 1)


def dyad_pairs(n_nodes, index):
    """Inverse of :func:`dyad_index` for an array of dyad indices."""
    iu, ju = np.triu_indices(n_nodes, 1)
    index = np.asarray(index, dtype=np.intp)
    return iu[index], ju[index]


def full_mask(data):
    return np.ones(data.n_dyads, dtype=bool)


def mask_from_indices(n_total, index):
    mask = np.zeros(n_total, dtype=bool)
    mask[np.asarray(index, dtype=np.intp)] = True
    return mask


@dataclass
class LatentState:
    """Chart coordinates of all nodes plus ``rho = log r``."""

    z_chart: np.ndarray
    rho: float

    def __post_init__(self):
        self.z_chart = np.asarray(self.z_chart, dtype=float)
        self.rho = float(self.rho)
        if self.z_chart.ndim != 2:
            raise UsageError("z_chart must be a 2-D array")

    @property
    def r(self):
        return float(np.exp(self.rho))

    @property
    def n_nodes(self):
        return self.z_chart.shape[0]

    def is_valid(self):
        return bool(np.all(np.isfinite(self.z_chart)) and np.isfinite(self.rho) and self.r > 0)

    def to_vector(self):
        return np.concatenate([self.z_chart.ravel(), [self.rho]])

    @classmethod
    def from_vector(cls, theta, n_nodes, dim):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (n_nodes * dim + 1,):
            raise UsageError(f"parameter vector of length {theta.size} does not fit {n_nodes}x{dim} + 1")
        return cls(theta[:-1].reshape(n_nodes, dim).copy(), theta[-1])


@dataclass(frozen=True)
class Hyperparams:
    alpha: float = 5.0
    r_scale: float = 1.0
    z_prior_scale: float = 1.0
    eta: float = 1.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.r_scale > 0 and self.z_prior_scale > 0):
            raise UsageError("alpha, r_scale and z_prior_scale must be positive")
        # eta = 0 is accepted so the prior alone can be evaluated
        if not 0 <= self.eta <= 1:
            raise UsageError(f"eta must lie in (0, 1], got {self.eta}")

    def with_eta(self, eta):
        return replace(self, eta=float(eta))


# ---------------------------------------------------------------------------
# link function and Bernoulli terms


def log_sigmoid(x):
    """log(sigmoid(x)) without overflow, branched on the sign of x."""
    x = np.asarray(x, dtype=float)
    neg = np.minimum(x, 0.0)
    return neg - np.log1p(np.exp(-np.abs(x)))


def link_prob(d, r, alpha):
    """Edge probability ``sigmoid(alpha * (r - d))``."""
    return expit(alpha * (np.asarray(r, dtype=float) - np.asarray(d, dtype=float)))


def dyad_log_lik(a, d, r, alpha):
    """Bernoulli log-likelihood of label ``a`` at latent distance ``d``."""
    x = alpha * (np.asarray(r, dtype=float) - np.asarray(d, dtype=float))
    sign = 2.0 * np.asarray(a, dtype=float) - 1.0
    # a*log s(x) + (1-a)*log s(-x) == log s((2a-1) x) for binary a
    return log_sigmoid(sign * x)


# ---------------------------------------------------------------------------
# priors


def log_prior(state, h):
    """Chart-space normal prior plus half-normal radius prior in rho-space."""
    z = state.z_chart
    s = h.z_prior_scale
    lp_z = -0.5 * np.sum(z * z) / s**2 - z.size * (np.log(s) + _LOG_SQRT_2PI)
    r = np.exp(state.rho)
    lp_r = np.log(2.0) - np.log(h.r_scale) - _LOG_SQRT_2PI - 0.5 * (r / h.r_scale) ** 2
    return float(lp_z + lp_r + state.rho)


def _log_prior_grad_rho(rho, r_scale):
    return 1.0 - np.exp(2.0 * rho) / r_scale**2


# ---------------------------------------------------------------------------
# tempered posterior


class EtaPosterior:
    """The eta-posterior bound to one dataset, mask, geometry and hyperparameters.

    ``logp_and_grad`` works on the flat parameter vector and performs no
    validation: non-finite values propagate so the sampler can flag them
    as divergences.
    """

    def __init__(self, data, mask, g, h):
        self.data = data
        self.geometry = GeometryKind.parse(g)
        self.hyper = h
        self.dim = chart_dim(self.geometry)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != data.labels.shape:
            raise UsageError(f"mask of shape {mask.shape} does not match {data.n_dyads} dyads")
        self.mask = mask
        self.dyads = np.flatnonzero(mask)
        iu, ju = data.pairs()
        self.i = iu[self.dyads]
        self.j = ju[self.dyads]
        self.sign = 2.0 * data.labels[self.dyads] - 1.0
        self.i = self.i.astype(np.int64)
        self.j = self.j.astype(np.int64)
        self.n_nodes = data.n_nodes
        self.n_params = self.n_nodes * self.dim + 1

    def _unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise UsageError(f"expected parameter vector of length {self.n_params}, got {theta.shape}")
        return theta[:-1].reshape(self.n_nodes, self.dim), theta[-1]

    def _check_state(self, state):
        if state.z_chart.shape != (self.n_nodes, self.dim):
            raise UsageError(
                f"state has shape {state.z_chart.shape}, expected ({self.n_nodes}, {self.dim})"
            )
        return state.to_vector()

    def log_lik_terms(self, theta):
        """Per-dyad (untempered) log-likelihood over the masked dyads."""
        z, rho = self._unpack(theta)
        d = pairwise_distance(z[self.i], z[self.j], self.geometry)
        x = self.hyper.alpha * (np.exp(rho) - d)
        return log_sigmoid(self.sign * x)

    def logp(self, theta):
        z, rho = self._unpack(theta)
        lp = log_prior(LatentState(z, rho), self.hyper)
        if self.hyper.eta == 0:
            return lp
        return lp + self.hyper.eta * float(np.sum(self.log_lik_terms(theta)))

    def logp_and_grad(self, theta):
        h = self.hyper
        theta = np.ascontiguousarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise UsageError(f"expected parameter vector of length {self.n_params}, got {theta.shape}")
        grad = np.empty(self.n_params)
        lp = _kernels.logp_grad(
            theta, self.n_nodes, self.dim, self.i, self.j, self.sign, h.alpha, h.eta,
            self.geometry.code, h.z_prior_scale, h.r_scale, grad,
        )
        return lp, grad

    def logp_and_grad_numpy(self, theta):
        """Same as :meth:`logp_and_grad`, assembled from the numpy distance kernels."""
        z, rho = self._unpack(theta)
        h = self.hyper
        r = np.exp(rho)
        grad_z = -z / h.z_prior_scale**2
        lp = log_prior(LatentState(z, rho), h)
        grad_rho = _log_prior_grad_rho(rho, h.r_scale)
        if h.eta != 0 and self.dyads.size:
            d, ga, gb = pairwise_distance_grad(z[self.i], z[self.j], self.geometry)
            sx = self.sign * (h.alpha * (r - d))
            lp += h.eta * float(np.sum(log_sigmoid(sx)))
            # d/dx log s(sign*x) = sign * s(-sign*x)
            dx = h.eta * self.sign * expit(-sx)
            grad_rho += h.alpha * r * float(np.sum(dx))
            w = -h.alpha * dx
            n = self.n_nodes
            for k in range(self.dim):
                grad_z[:, k] += np.bincount(self.i, weights=w * ga[:, k], minlength=n)
                grad_z[:, k] += np.bincount(self.j, weights=w * gb[:, k], minlength=n)
        grad = np.empty(self.n_params)
        grad[:-1] = grad_z.ravel()
        grad[-1] = grad_rho
        return lp, grad

    def grad(self, theta):
        return self.logp_and_grad(theta)[1]

    # state-level API with validation

    def log_density(self, state):
        theta = self._check_state(state)
        # overflow is reported below as a NumericalError
        with np.errstate(over="ignore", invalid="ignore"):
            value = self.logp(theta)
        if not np.isfinite(value):
            _raise_nonfinite(self, theta, value)
        return value

    def gradient(self, state):
        theta = self._check_state(state)
        with np.errstate(over="ignore", invalid="ignore"):
            value, grad = self.logp_and_grad(theta)
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            _raise_nonfinite(self, theta, value)
        return grad


def _raise_nonfinite(post, theta, value):
    with np.errstate(over="ignore", invalid="ignore"):
        terms = post.log_lik_terms(theta)
    bad = np.flatnonzero(~np.isfinite(terms))
    if bad.size:
        idx = int(post.dyads[bad[0]])
        raise NumericalError(f"non-finite log-likelihood at dyad {idx}", dyad_index=idx)
    raise NumericalError(f"non-finite log-posterior value {value!r} (prior or gradient term)")


def eta_log_posterior(state, data, mask, g, h):
    """Prior log-density plus eta times the masked log-likelihood."""
    return EtaPosterior(data, mask, g, h).log_density(state)


def eta_log_posterior_gradient(state, data, mask, g, h):
    """Gradient over ``(z_chart.ravel(), rho)`` of :func:`eta_log_posterior`."""
    return EtaPosterior(data, mask, g, h).gradient(state)


def sample_prior_state(n_nodes, g, h, seed):
    """Initial state: chart coordinates from the prior, rho = log|eps * r_scale|."""
    if n_nodes < 2:
        raise UsageError("need at least two nodes")
    rng = np.random.default_rng(seed)
    dim = chart_dim(g)
    z = rng.normal(0.0, h.z_prior_scale, size=(n_nodes, dim))
    eps = rng.standard_normal()
    return LatentState(z, np.log(abs(eps) * h.r_scale))


def pair_distances(state, g):
    """Distances for every dyad of a state, in dyad order."""
    iu, ju = np.triu_indices(state.n_nodes, 1)
    return pairwise_distance(state.z_chart[iu], state.z_chart[ju], g)
