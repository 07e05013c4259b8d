"""Post-hoc analysis: alignment, ablations, loss reports and misspecification demos."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from . import _kernels
from .errors import ConfigError, UsageError
from .manifold import GeometryKind
from .prequential import draws_to_charts, run_sweep

# ---------------------------------------------------------------------------
# Procrustes


def procrustes_align(X, Y_ref, center=True):
    """Rotate (and reflect) ``X`` onto ``Y_ref`` in the least-squares sense.

    Parameters
    ----------
    X, Y_ref : array_like, shape (n, d)
        Point sets with d in {2, 3} and n >= d.
    center : bool
        Remove both centroids before solving and re-add the centroid of
        ``Y_ref`` afterwards. Pass False for point sets whose isometries fix
        the origin (unit-sphere points, hyperboloid spatial coordinates).

    Returns
    -------
    aligned : ndarray, shape (n, d)
    degenerate : bool
        True when the cross-covariance is rank deficient, in which case the
        rotation is not unique and the returned one is only one of the optima.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y_ref, dtype=float)
    if X.shape != Y.shape or X.ndim != 2:
        raise UsageError(f"shape mismatch: {X.shape} vs {Y.shape}")
    n, d = X.shape
    if d not in (2, 3) or n < d:
        raise UsageError("need d in {2, 3} and at least d points")
    mx = X.mean(axis=0) if center else np.zeros(d)
    my = Y.mean(axis=0) if center else np.zeros(d)
    xc = X - mx
    yc = Y - my
    u, s, vt = np.linalg.svd(xc.T @ yc)
    tol = max(s[0], 1.0) * d * np.finfo(float).eps * 16
    degenerate = bool(s[-1] <= tol)
    rot = u @ vt
    return xc @ rot + my, degenerate


def frobenius_residual(X, Y):
    return float(np.linalg.norm(np.asarray(X, float) - np.asarray(Y, float)))


def posterior_mean_embedding(draws, logp, g):
    """Procrustes-aligned posterior mean positions in embedded coordinates.

    Every draw is aligned to the highest-density draw before averaging.
    Only isometries are used: rotation plus translation in the plane,
    rotation about the origin on the sphere, and rotation about the time
    axis for the hyperboloid (applied to the spatial chart coordinates).
    Returns an (n, 2) array for Euclidean and (n, 3) otherwise.
    """
    g = GeometryKind.parse(g)
    charts, _ = draws_to_charts(draws, g)
    logp = np.asarray(logp, dtype=float).ravel()
    if g is GeometryKind.SPHERICAL:
        charts = charts / np.linalg.norm(charts, axis=-1, keepdims=True)
    ref = charts[int(np.argmax(logp))]
    center = g is GeometryKind.EUCLIDEAN
    mean = np.mean([procrustes_align(c, ref, center=center)[0] for c in charts], axis=0)
    if g is GeometryKind.SPHERICAL:
        return mean / np.linalg.norm(mean, axis=1, keepdims=True)
    if g is GeometryKind.HYPERBOLOID:
        return np.column_stack([np.sqrt(1.0 + np.sum(mean**2, axis=1)), mean])
    return mean


# ---------------------------------------------------------------------------
# sensitivity ablations

ABLATION_FIELDS = {"K": "K", "rho": "rho", "shuffle": "shuffle_seed"}


@dataclass(frozen=True)
class Ablation:
    vary: str
    values: tuple

    def __post_init__(self):
        if self.vary not in ABLATION_FIELDS:
            raise ConfigError(f"ablation.vary must be one of {sorted(ABLATION_FIELDS)}, got {self.vary!r}")
        values = tuple(self.values)
        if not values:
            raise ConfigError("ablation.values must be nonempty")
        object.__setattr__(self, "values", values)

    def apply(self, base, value):
        return replace(base, **{ABLATION_FIELDS[self.vary]: value})


@dataclass
class SensitivityResult:
    """One RiskTable per ablation setting, all sharing the eta grid."""

    ablation: Ablation
    tables: list = field(default_factory=list)

    @property
    def settings(self):
        return list(self.ablation.values)

    def curves(self, g, kind="log"):
        """(etas, losses) with losses of shape (n_settings, n_eta)."""
        etas = None
        rows = []
        for t in self.tables:
            e, loss = t.curve(g, kind)
            etas = e if etas is None else etas
            rows.append(loss)
        return etas, np.vstack(rows)

    def argmins(self, g):
        """eta* of every setting."""
        g = GeometryKind.parse(g)
        return [t.eta_star.get(g, float("nan")) for t in self.tables]

    def mean_curve(self, g, kind="log"):
        return self.curves(g, kind)[1].mean(axis=0)

    def std_curve(self, g, kind="log"):
        losses = self.curves(g, kind)[1]
        return losses.std(axis=0, ddof=1 if losses.shape[0] > 1 else 0)

    def mean_argmin(self, g, kind="log"):
        """eta minimizing the mean curve (ties to the smaller eta)."""
        etas, _ = self.curves(g, kind)
        return float(etas[int(np.argmin(self.mean_curve(g, kind)))])


def sensitivity_sweep(data, base, ablation, dataset="", workers=None):
    """Re-run the sweep once per ablation setting, all else fixed."""
    result = SensitivityResult(ablation)
    for value in ablation.values:
        result.tables.append(run_sweep(data, ablation.apply(base, value), dataset=dataset, workers=workers))
    return result


def grid_steps(grid, a, b):
    """Distance between two eta values in grid positions."""
    grid = [float(x) for x in grid]
    return abs(grid.index(float(a)) - grid.index(float(b)))


# ---------------------------------------------------------------------------
# overfitting gap


@dataclass(frozen=True)
class OverfitRow:
    dataset: str
    geometry: GeometryKind
    eta_star: float
    log_star: float
    log_one: float
    sq_star: float
    sq_one: float

    @property
    def baseline_available(self):
        return math.isfinite(self.log_one)

    @property
    def abs_log_reduction(self):
        return self.log_one - self.log_star

    @property
    def abs_sq_reduction(self):
        return self.sq_one - self.sq_star

    @property
    def rel_log_reduction(self):
        return self.abs_log_reduction / self.log_one

    @property
    def rel_sq_reduction(self):
        return self.abs_sq_reduction / self.sq_one

    def as_dict(self):
        return {
            "dataset": self.dataset,
            "geometry": self.geometry.value,
            "eta_star": self.eta_star,
            "baseline_available": self.baseline_available,
            "log_loss_star": self.log_star,
            "log_loss_one": self.log_one,
            "abs_log_reduction": self.abs_log_reduction,
            "rel_log_reduction": self.rel_log_reduction,
            "sq_loss_star": self.sq_star,
            "sq_loss_one": self.sq_one,
            "abs_sq_reduction": self.abs_sq_reduction,
            "rel_sq_reduction": self.rel_sq_reduction,
        }


def overfitting_report(table):
    """Loss at eta* against eta = 1 for every geometry of one table.

    Rows without a finished eta = 1 cell carry NaN baselines and report
    ``baseline_available`` False.
    """
    rows = []
    for g, eta in table.eta_star.items():
        star = table.cell(g, eta)
        one = table.cells.get((g, 1.0))
        if one is None or one.missing:
            log_one = sq_one = float("nan")
        else:
            log_one, sq_one = one.cum_log_loss, one.cum_sq_loss
        rows.append(OverfitRow(table.dataset, g, eta, star.cum_log_loss, log_one, star.cum_sq_loss, sq_one))
    return rows


def mean_reductions(rows):
    """Unweighted mean relative (log, sq) reduction over rows with a baseline."""
    ok = [r for r in rows if r.baseline_available]
    if not ok:
        return float("nan"), float("nan")
    return (
        float(np.mean([r.rel_log_reduction for r in ok])),
        float(np.mean([r.rel_sq_reduction for r in ok])),
    )


# ---------------------------------------------------------------------------
# improvement distribution


@dataclass
class ImprovementHistogram:
    edges: np.ndarray
    counts: np.ndarray
    mean_improvement: np.ndarray
    total_improvement: np.ndarray
    cumulative_gain: np.ndarray
    errors: np.ndarray
    improvements: np.ndarray
    bin_index: np.ndarray


def _log_loss(p, a):
    return -(a * np.log(p) + (1.0 - a) * np.log1p(-p))


def improvement_histogram(p_hat_safe, p_hat_std, labels, n_bins=10, binning="decile"):
    """Per-dyad log-loss improvement of the tempered fit, binned by standard-Bayes error.

    Improvement is loss(std) - loss(safe), so positive values favour the
    tempered posterior. ``binning`` is 'decile' (quantiles of the error) or
    'fixed' (equal-width bins on [0, 1]). ``cumulative_gain`` accumulates
    the per-bin totals from the lowest-error bin upward.
    """
    ps = np.asarray(p_hat_safe, dtype=float)
    pt = np.asarray(p_hat_std, dtype=float)
    a = np.asarray(labels, dtype=float)
    if not (ps.shape == pt.shape == a.shape) or ps.ndim != 1 or ps.size == 0:
        raise UsageError("p_hat_safe, p_hat_std and labels must be nonempty vectors of equal length")
    if not (np.all((ps > 0) & (ps < 1)) and np.all((pt > 0) & (pt < 1))):
        raise UsageError("probabilities must lie strictly inside (0, 1)")
    if n_bins < 1:
        raise UsageError("n_bins must be >= 1")
    err = np.abs(pt - a)
    imp = _log_loss(pt, a) - _log_loss(ps, a)
    if binning == "decile":
        edges = np.quantile(err, np.linspace(0.0, 1.0, n_bins + 1))
    elif binning == "fixed":
        edges = np.linspace(0.0, 1.0, n_bins + 1)
    else:
        raise UsageError(f"unknown binning {binning!r}")
    # inner edges only, so every dyad lands in exactly one bin
    idx = np.searchsorted(edges[1:-1], err, side="right")
    counts = np.bincount(idx, minlength=n_bins)
    total = np.bincount(idx, weights=imp, minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(counts > 0, total / np.maximum(counts, 1), np.nan)
    return ImprovementHistogram(edges, counts, mean, total, np.cumsum(total), err, imp, idx)


# ---------------------------------------------------------------------------
# misspecification demos


@dataclass
class DemoResult:
    pure_state_loss: float
    mixture_loss: float
    converged: bool
    z: np.ndarray
    r: float
    n_starts: int

    @property
    def mixture_wins(self):
        return self.mixture_loss < self.pure_state_loss


def _graph_arrays(n, edges):
    iu, ju = np.triu_indices(n, 1)
    adj = np.zeros((n, n), dtype=bool)
    for i, j in edges:
        adj[i, j] = adj[j, i] = True
    sign = np.where(adj[iu, ju], 1.0, -1.0)
    return iu.astype(np.int64), ju.astype(np.int64), sign


def best_pure_state(n, edges, alpha, n_starts=20, max_iter=2000, seed=0):
    """Multi-start L-BFGS on the Euclidean soft-link negative log-likelihood.

    Returns ``(loss, z, r, converged)`` for the best start; ``converged``
    is False when no start met the optimizer's tolerance.
    """
    ii, jj, sign = _graph_arrays(n, edges)
    rng = np.random.default_rng(seed)

    def nll(theta):
        z = theta[:-1].reshape(n, 2)
        g = np.zeros((n, 2))
        ll, drho = _kernels.loglik_grad(z, math.exp(theta[-1]), ii, jj, sign, alpha, 1.0, 0, g)
        return -ll, -np.append(g.ravel(), drho)

    best = None
    any_converged = False
    for _ in range(n_starts):
        theta0 = np.append(rng.standard_normal(2 * n), rng.normal(0.0, 0.5))
        res = minimize(nll, theta0, jac=True, method="L-BFGS-B", options={"maxiter": max_iter})
        any_converged |= bool(res.success)
        if best is None or res.fun < best.fun:
            best = res
    return float(best.fun), best.x[:-1].reshape(n, 2), float(np.exp(best.x[-1])), any_converged


def mixture_loss(edge_prob, labels):
    """Dyad-wise log-loss of fixed mixture edge probabilities (0 log 0 = 0)."""
    p = np.asarray(edge_prob, dtype=float)
    a = np.asarray(labels, dtype=float)
    q = np.where(a > 0, p, 1.0 - p)
    if np.any(q <= 0):
        return math.inf
    return float(-np.sum(np.log(q)))


def star_graph_demo(M, alpha=20.0, n_starts=20, max_iter=2000, seed=0):
    """Star K_{1,M}: best single embedding against the M-component mixture.

    Component k puts leaf k on the hub and every other node out of reach,
    so each hub-leaf edge gets probability 1/M and leaf-leaf non-edges get
    probability 0 under the mixture, for a total loss of M ln M.
    """
    if M < 2:
        raise UsageError("star graph needs M >= 2 leaves")
    n = M + 1
    edges = [(0, k) for k in range(1, n)]
    iu, ju = np.triu_indices(n, 1)
    labels = iu == 0
    mix = mixture_loss(np.where(labels, 1.0 / M, 0.0), labels)
    closed = M * math.log(M)
    if not math.isclose(mix, closed, rel_tol=1e-12):
        raise ArithmeticError(f"mixture accounting {mix} != closed form {closed}")
    loss, z, r, ok = best_pure_state(n, edges, alpha, n_starts, max_iter, seed)
    return DemoResult(loss, closed, ok, z, r, n_starts)


def bipartite_demo(sizes, alpha=20.0, n_starts=20, max_iter=2000, seed=0):
    """Complete bipartite K_{|U|,|V|}: best single embedding against a 2-component mixture.

    Each component pulls one side onto the other and pushes the rest away,
    so cross edges get probability 1/2 and same-side non-edges probability
    0, for a total loss of |U| |V| ln 2.
    """
    nu, nv = (int(s) for s in sizes)
    if nu < 1 or nv < 1 or nu + nv < 3:
        raise UsageError("bipartite sides must be nonempty with at least 3 nodes in total")
    n = nu + nv
    edges = [(i, nu + j) for i in range(nu) for j in range(nv)]
    iu, ju = np.triu_indices(n, 1)
    labels = (iu < nu) & (ju >= nu)
    mix = mixture_loss(np.where(labels, 0.5, 0.0), labels)
    closed = nu * nv * math.log(2.0)
    if not math.isclose(mix, closed, rel_tol=1e-12):
        raise ArithmeticError(f"mixture accounting {mix} != closed form {closed}")
    loss, z, r, ok = best_pure_state(n, edges, alpha, n_starts, max_iter, seed)
    return DemoResult(loss, closed, ok, z, r, n_starts)
