"""No-U-Turn Hamiltonian Monte Carlo over an unconstrained parameter vector.

Multinomial trajectory sampling with the generalized U-turn criterion
(including the checks across merged subtrees), dual-averaging step-size
adaptation and a windowed diagonal mass matrix, following the usual
Stan warmup schedule.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SamplingError, UsageError

log = logging.getLogger(__name__)

MAX_DELTA_H = 1000.0

__all__ = [
    "ChainConfig",
    "SampleBatch",
    "leapfrog_step",
    "sample_posterior",
]


@dataclass(frozen=True)
class ChainConfig:
    n_chains: int = 4
    n_warmup: int = 500
    n_samples: int = 1000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0

    def __post_init__(self):
        if min(self.n_chains, self.n_warmup, self.n_samples, self.max_tree_depth) < 1:
            raise UsageError("chain counts and max_tree_depth must be >= 1")
        if not 0 < self.target_accept < 1:
            raise UsageError("target_accept must lie in (0, 1)")
        if self.max_tree_depth > 12:
            raise UsageError("max_tree_depth must be <= 12")


@dataclass
class SampleBatch:
    """Post-warmup draws of all chains.

    ``draws`` has shape (n_chains, n_samples, dim); ``logp`` holds the
    target log-density of every draw.
    """

    draws: np.ndarray
    logp: np.ndarray
    accept_stats: np.ndarray
    divergence_count: np.ndarray
    step_size: np.ndarray
    mean_tree_depth: np.ndarray
    warnings: list = field(default_factory=list)

    @property
    def n_chains(self):
        return self.draws.shape[0]

    @property
    def n_samples(self):
        return self.draws.shape[1]

    def pooled(self):
        """All draws stacked to shape (n_chains * n_samples, dim)."""
        return self.draws.reshape(-1, self.draws.shape[-1])


def leapfrog_step(position, momentum, step_size, gradient_fn, mass_diag):
    """One leapfrog step for H(q, p) = -log pi(q) + p' M^-1 p / 2.

    ``gradient_fn`` returns the gradient of log pi. Returns
    ``(position, momentum, divergent)``; a non-finite gradient marks the
    step divergent instead of raising.
    """
    q = np.asarray(position, dtype=float)
    p = np.asarray(momentum, dtype=float)
    inv_mass = 1.0 / np.asarray(mass_diag, dtype=float)
    g = np.asarray(gradient_fn(q), dtype=float)
    p_half = p + 0.5 * step_size * g
    q_new = q + step_size * inv_mass * p_half
    g_new = np.asarray(gradient_fn(q_new), dtype=float)
    p_new = p_half + 0.5 * step_size * g_new
    divergent = not (np.all(np.isfinite(g)) and np.all(np.isfinite(g_new)))
    return q_new, p_new, divergent


# ---------------------------------------------------------------------------
# NUTS internals


class _Point:
    __slots__ = ("q", "p", "logp", "grad", "p_sharp")

    def __init__(self, q, p, logp, grad, p_sharp):
        self.q = q
        self.p = p
        self.logp = logp
        self.grad = grad
        self.p_sharp = p_sharp


class _Tree:
    __slots__ = ("beg", "end", "sample", "log_w", "rho", "valid", "divergent")

    def __init__(self, beg, end, sample, log_w, rho, valid, divergent):
        self.beg = beg
        self.end = end
        self.sample = sample
        self.log_w = log_w
        self.rho = rho
        self.valid = valid
        self.divergent = divergent


def _logaddexp(a, b):
    if a < b:
        a, b = b, a
    if b == -math.inf:
        return a
    return a + math.log1p(math.exp(b - a))


def _no_uturn(p_sharp_a, p_sharp_b, rho):
    return float(p_sharp_a @ rho) > 0 and float(p_sharp_b @ rho) > 0


class _Integrator:
    """Holds the per-transition constants shared by the tree builder."""

    def __init__(self, value_and_grad, inv_mass, step_size, h0, rng):
        self.value_and_grad = value_and_grad
        self.inv_mass = inv_mass
        self.step_size = step_size
        self.h0 = h0
        self.rng = rng
        self.n_leapfrog = 0
        self.sum_accept = 0.0

    def step(self, point, direction):
        eps = direction * self.step_size
        p = point.p + 0.5 * eps * point.grad
        q = point.q + eps * self.inv_mass * p
        logp, grad = self.value_and_grad(q)
        p = p + 0.5 * eps * grad
        p_sharp = self.inv_mass * p
        return _Point(q, p, logp, grad, p_sharp)

    def build(self, start, direction, depth):
        if depth == 0:
            pt = self.step(start, direction)
            self.n_leapfrog += 1
            h = -pt.logp + 0.5 * float(pt.p @ pt.p_sharp)
            # a non-finite gradient poisons the sum
            if not math.isfinite(h + float(pt.grad.sum())):
                h = math.inf
            delta = h - self.h0
            divergent = delta > MAX_DELTA_H
            self.sum_accept += 0.0 if divergent else math.exp(-max(delta, 0.0))
            # momenta are never updated in place, so sharing pt.p is safe
            return _Tree(pt, pt, pt, -delta, pt.p, not divergent, divergent)
        left = self.build(start, direction, depth - 1)
        if not left.valid:
            return left
        right = self.build(left.end, direction, depth - 1)
        if not right.valid:
            right.sample = left.sample
            return right
        log_w = _logaddexp(left.log_w, right.log_w)
        if math.log(self.rng.random()) < right.log_w - log_w:
            sample = right.sample
        else:
            sample = left.sample
        rho = left.rho + right.rho
        valid = (
            _no_uturn(left.beg.p_sharp, right.end.p_sharp, rho)
            and _no_uturn(left.beg.p_sharp, right.beg.p_sharp, left.rho + right.beg.p)
            and _no_uturn(left.end.p_sharp, right.end.p_sharp, right.rho + left.end.p)
        )
        return _Tree(left.beg, right.end, sample, log_w, rho, valid, False)


def _nuts_transition(current, value_and_grad, inv_mass, step_size, max_depth, rng):
    """One NUTS transition from ``current`` (a _Point with stale momentum)."""
    p0 = rng.standard_normal(current.q.size) / np.sqrt(inv_mass)
    start = _Point(current.q, p0, current.logp, current.grad, inv_mass * p0)
    h0 = -start.logp + 0.5 * float(p0 @ start.p_sharp)
    integ = _Integrator(value_and_grad, inv_mass, step_size, h0, rng)

    minus = plus = start
    rho = p0.copy()
    log_w = 0.0
    sample = start
    depth = 0
    divergent = False
    while depth < max_depth:
        direction = 1 if rng.random() < 0.5 else -1
        near, far = (plus, minus) if direction > 0 else (minus, plus)
        sub = integ.build(near, direction, depth)
        depth += 1
        if sub.divergent:
            divergent = True
        if not sub.valid:
            break
        if math.log(rng.random()) < sub.log_w - log_w:
            sample = sub.sample
        log_w = _logaddexp(log_w, sub.log_w)
        if direction > 0:
            plus = sub.end
        else:
            minus = sub.end
        old_rho = rho
        rho = old_rho + sub.rho
        if not (
            _no_uturn(far.p_sharp, sub.end.p_sharp, rho)
            and _no_uturn(far.p_sharp, sub.beg.p_sharp, old_rho + sub.beg.p)
            and _no_uturn(near.p_sharp, sub.end.p_sharp, sub.rho + near.p)
        ):
            break
    accept = integ.sum_accept / max(integ.n_leapfrog, 1)
    return sample, accept, divergent, depth


# ---------------------------------------------------------------------------
# adaptation


class _DualAveraging:
    def __init__(self, step_size, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.restart(step_size)

    def restart(self, step_size):
        self.mu = math.log(10.0 * step_size)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept):
        self.counter += 1
        accept = min(1.0, accept)
        w = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - w) * self.s_bar + w * (self.target - accept)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = x_eta * x + (1.0 - x_eta) * self.x_bar
        return math.exp(x)

    def final(self):
        return math.exp(self.x_bar)


def _warmup_windows(n_warmup, init_buffer=75, term_buffer=50, base_window=25):
    """End indices (exclusive) of the slow mass-adaptation windows."""
    if n_warmup < 20:
        return init_buffer, []
    if init_buffer + term_buffer + base_window > n_warmup:
        init_buffer = int(0.15 * n_warmup)
        term_buffer = int(0.1 * n_warmup)
        base_window = n_warmup - init_buffer - term_buffer
    ends = []
    start = init_buffer
    size = base_window
    last = n_warmup - term_buffer
    while start < last:
        end = start + size
        # stretch the final window to the terminal buffer
        if end + 2 * size > last:
            end = last
        ends.append(end)
        start = end
        size *= 2
    return init_buffer, ends


def _find_reasonable_step(point, value_and_grad, inv_mass, step_size, rng):
    """Double or halve the step until one leapfrog crosses acceptance 0.8."""
    direction = 0
    for _ in range(100):
        p0 = rng.standard_normal(point.q.size) / np.sqrt(inv_mass)
        start = _Point(point.q, p0, point.logp, point.grad, inv_mass * p0)
        h0 = -start.logp + 0.5 * float(p0 @ start.p_sharp)
        integ = _Integrator(value_and_grad, inv_mass, step_size, h0, rng)
        new = integ.step(start, 1)
        h = -new.logp + 0.5 * float(new.p @ new.p_sharp)
        delta = h0 - h if math.isfinite(h) else -math.inf
        if direction == 0:
            direction = 1 if delta > math.log(0.8) else -1
        if direction == 1 and not delta > math.log(0.8):
            break
        if direction == -1 and not delta < math.log(0.8):
            break
        step_size = step_size * 2.0 if direction == 1 else step_size / 2.0
        if step_size > 1e7 or step_size < 1e-12:
            break
    return step_size


def _run_chain(value_and_grad, init, cfg, rng):
    q = np.array(init, dtype=float)
    logp, grad = value_and_grad(q)
    if not (math.isfinite(logp) and np.all(np.isfinite(grad))):
        raise SamplingError("initial log-density or gradient is not finite")
    dim = q.size
    inv_mass = np.ones(dim)
    point = _Point(q, np.zeros(dim), logp, grad, np.zeros(dim))

    step = _find_reasonable_step(point, value_and_grad, inv_mass, 1.0, rng)
    da = _DualAveraging(step, cfg.target_accept)
    init_buffer, window_ends = _warmup_windows(cfg.n_warmup)
    window_start = init_buffer
    window_draws = []

    for it in range(cfg.n_warmup):
        point, accept, _, _ = _nuts_transition(point, value_and_grad, inv_mass, step, cfg.max_tree_depth, rng)
        step = da.update(accept)
        if window_ends and window_start <= it < window_ends[-1]:
            window_draws.append(point.q)
        if window_ends and it + 1 == window_ends[0]:
            window_ends.pop(0)
            x = np.asarray(window_draws)
            n = x.shape[0]
            var = x.var(axis=0, ddof=1) if n > 1 else np.ones(dim)
            # regularize toward unit scale for short windows
            inv_mass = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            window_draws = []
            window_start = it + 1
            step = _find_reasonable_step(point, value_and_grad, inv_mass, step, rng)
            da.restart(step)
    step = da.final()

    draws = np.empty((cfg.n_samples, dim))
    logps = np.empty(cfg.n_samples)
    accepts = np.empty(cfg.n_samples)
    depths = np.empty(cfg.n_samples)
    n_div = 0
    for it in range(cfg.n_samples):
        point, accept, divergent, depth = _nuts_transition(
            point, value_and_grad, inv_mass, step, cfg.max_tree_depth, rng
        )
        draws[it] = point.q
        logps[it] = point.logp
        accepts[it] = accept
        depths[it] = depth
        n_div += divergent
    return draws, logps, accepts.mean(), n_div, step, depths.mean()


def chain_rngs(seed, n_chains):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_chains)]


def sample_posterior(log_density_fn, gradient_fn, init, cfg, value_and_grad_fn=None):
    """Run ``cfg.n_chains`` independent NUTS chains.

    Parameters
    ----------
    log_density_fn, gradient_fn : callable
        Log-density of the target and its gradient on flat vectors.
    init : array or callable
        A single starting vector shared by all chains, an array of shape
        (n_chains, dim), or ``init(chain_index)`` returning a vector.
    cfg : ChainConfig
    value_and_grad_fn : callable, optional
        Returns ``(logp, grad)`` in one call; used instead of the two
        separate functions when given.
    """
    if value_and_grad_fn is None:

        def value_and_grad_fn(q):
            return log_density_fn(q), gradient_fn(q)

    rngs = chain_rngs(cfg.seed, cfg.n_chains)
    results = []
    for c in range(cfg.n_chains):
        if callable(init):
            start = init(c)
        else:
            arr = np.asarray(init, dtype=float)
            start = arr[c] if arr.ndim == 2 else arr
        # overflow inside a diverging trajectory is handled as a divergence
        with np.errstate(over="ignore", invalid="ignore"):
            results.append(_run_chain(value_and_grad_fn, start, cfg, rngs[c]))

    batch = SampleBatch(
        draws=np.stack([r[0] for r in results]),
        logp=np.stack([r[1] for r in results]),
        accept_stats=np.array([r[2] for r in results]),
        divergence_count=np.array([r[3] for r in results], dtype=int),
        step_size=np.array([r[4] for r in results]),
        mean_tree_depth=np.array([r[5] for r in results]),
    )
    frac = batch.divergence_count.sum() / (cfg.n_chains * cfg.n_samples)
    if frac > 0.1:
        msg = f"{frac:.1%} of post-warmup transitions diverged"
        batch.warnings.append(msg)
        log.warning(msg)
    return batch
