"""Rank-normalized split-R-hat and bulk effective sample size."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm, rankdata

from .errors import UsageError


@dataclass
class Diagnostics:
    rhat: dict = field(default_factory=dict)
    ess_bulk: dict = field(default_factory=dict)

    def worst(self):
        """(max R-hat, min ESS) over all summaries."""
        rh = max(self.rhat.values()) if self.rhat else float("nan")
        es = min(self.ess_bulk.values()) if self.ess_bulk else float("nan")
        return rh, es

    def to_dict(self):
        return {"rhat": dict(self.rhat), "ess_bulk": dict(self.ess_bulk)}

    @classmethod
    def from_dict(cls, d):
        return cls(dict(d["rhat"]), dict(d["ess_bulk"]))


def _as_chains(chains):
    x = np.asarray(chains, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise UsageError("chains must have shape (n_chains, n_samples)")
    if x.shape[1] < 4:
        raise UsageError("need at least 4 draws per chain")
    return x


def split_chains(x):
    """Halve every chain; the middle draw of an odd-length chain is dropped."""
    half = x.shape[1] // 2
    return np.vstack([x[:, :half], x[:, -half:]])


def rank_normalize(x):
    """Blom-style normal scores of the pooled ranks, keeping the chain layout."""
    ranks = rankdata(x, method="average").reshape(x.shape)
    return norm.ppf((ranks - 0.375) / (x.size + 0.25))


def _rhat(x):
    n = x.shape[1]
    w = np.mean(np.var(x, axis=1, ddof=1))
    b_over_n = np.var(np.mean(x, axis=1), ddof=1)
    if w == 0:
        return 1.0 if b_over_n == 0 else float("inf")
    var_plus = (n - 1) / n * w + b_over_n
    return float(np.sqrt(var_plus / w))


def split_rhat(chains, rank_normalize_draws=True):
    """Split-R-hat over the 2 * n_chains half-chains.

    Constant input returns 1.0.
    """
    x = _as_chains(chains)
    if np.ptp(x) == 0:
        return 1.0
    if rank_normalize_draws:
        x = rank_normalize(x)
    return _rhat(split_chains(x))


def _autocov(x):
    """Biased autocovariance of every row, via FFT."""
    n = x.shape[1]
    xc = x - x.mean(axis=1, keepdims=True)
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, n=size, axis=1)
    return np.fft.irfft(f * np.conj(f), n=size, axis=1)[:, :n] / n


def _ess(x):
    m, n = x.shape
    acov = _autocov(x)
    chain_mean = x.mean(axis=1)
    mean_var = np.mean(acov[:, 0]) * n / (n - 1)
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += np.var(chain_mean, ddof=1)

    rho = np.zeros(n)
    rho_even = 1.0
    rho[0] = 1.0
    rho_odd = 1.0 - (mean_var - np.mean(acov[:, 1])) / var_plus
    rho[1] = rho_odd
    # Geyer initial positive sequence over pairs of lags
    t = 1
    while t < n - 3 and rho_even + rho_odd > 0:
        rho_even = 1.0 - (mean_var - np.mean(acov[:, t + 1])) / var_plus
        rho_odd = 1.0 - (mean_var - np.mean(acov[:, t + 2])) / var_plus
        if rho_even + rho_odd >= 0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t - 2
    if rho_odd > 0:
        rho[max_t + 1] = rho_odd
    # initial monotone sequence
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2
    total = m * n
    tau = -1.0 + 2.0 * np.sum(rho[: max_t + 1]) + rho[max_t + 1]
    tau = max(tau, 1.0 / np.log10(total))
    return float(total / tau)


def ess_bulk(chains):
    """Bulk ESS: rank-normalized split chains, Geyer monotone truncation.

    Constant input returns 0.
    """
    x = _as_chains(chains)
    if np.ptp(x) == 0:
        return 0.0
    return _ess(split_chains(rank_normalize(x)))


def summarize(summaries):
    """Diagnostics for a mapping name -> (n_chains, n_samples) array."""
    diag = Diagnostics()
    for name, values in summaries.items():
        diag.rhat[name] = split_rhat(values)
        diag.ess_bulk[name] = ess_bulk(values)
    return diag
