"""Link-sequential R-SafeBayes: prequential risk over dyad blocks.

A sweep shuffles the dyads once, splits them into an initial training
block and K test blocks, and then, for every (geometry, eta) cell,
repeatedly samples the eta-posterior on the dyads seen so far, predicts
the next block and adds that block to the training set.
"""

from __future__ import annotations

import hashlib
import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .diagnostics import Diagnostics, summarize
from .errors import ConfigError, NumericalError, SamplingError, UsageError
from .manifold import GeometryKind, chart_dim, pairwise_distance
from .model import EtaPosterior, Hyperparams, link_prob, mask_from_indices, sample_prior_state
from .sampler import ChainConfig, sample_posterior

log = logging.getLogger(__name__)

DEFAULT_ETA_GRID = tuple(round(0.1 * k, 1) for k in range(1, 11))


# ---------------------------------------------------------------------------
# partition


@dataclass(frozen=True)
class DyadPartition:
    initial_block: np.ndarray
    test_blocks: tuple

    @property
    def K(self):
        return len(self.test_blocks)

    @property
    def n_dyads(self):
        return self.initial_block.size + sum(b.size for b in self.test_blocks)

    def training_dyads(self, k):
        """Dyads available before predicting test block ``k`` (1-based)."""
        return np.concatenate([self.initial_block, *self.test_blocks[: k - 1]])

    def digest(self):
        h = hashlib.sha256()
        for block in (self.initial_block, *self.test_blocks):
            h.update(np.asarray(block, dtype=np.int64).tobytes())
            h.update(b"|")
        return h.hexdigest()


def partition_dyads(n_nodes, rho, K, seed):
    """Shuffle all dyads and slice them into B_0 and K near-equal test blocks."""
    if n_nodes < 3:
        raise ConfigError("need at least 3 nodes")
    if K < 1 or not 0 < rho < 1:
        raise ConfigError(f"invalid partition settings K={K}, rho={rho}")
    total = n_nodes * (n_nodes - 1) // 2
    n0 = int(np.floor(rho * total + 0.5))
    if n0 < 1 or total - n0 < K:
        raise ConfigError(f"{total} dyads cannot fill an initial block and {K} test blocks")
    order = np.random.default_rng(seed).permutation(total)
    tests = tuple(np.array_split(order[n0:], K))
    return DyadPartition(order[:n0], tests)


# ---------------------------------------------------------------------------
# prediction and losses


def draws_to_charts(draws, g):
    """Split flat draws (S, n*D + 1) into charts (S, n, D) and radii (S,)."""
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 3:
        draws = draws.reshape(-1, draws.shape[-1])
    dim = chart_dim(g)
    n_nodes, rem = divmod(draws.shape[1] - 1, dim)
    if rem:
        raise UsageError(f"draw length {draws.shape[1]} does not fit geometry {g}")
    return draws[:, :-1].reshape(-1, n_nodes, dim), np.exp(draws[:, -1])


def draw_distances(charts, i, j, g):
    """Distances (S, m) of dyads (i, j) under every draw."""
    s, _, dim = charts.shape
    d = pairwise_distance(charts[:, i].reshape(-1, dim), charts[:, j].reshape(-1, dim), g)
    return d.reshape(s, -1)


def posterior_predictive(samples, dyads, g, alpha, n_nodes=None, chunk=256):
    """Monte Carlo mean of the link probability over all retained draws."""
    draws = samples.draws if hasattr(samples, "draws") else np.asarray(samples)
    charts, r = draws_to_charts(draws, g)
    if charts.shape[0] == 0:
        raise UsageError("empty sample set")
    n = charts.shape[1] if n_nodes is None else n_nodes
    iu, ju = np.triu_indices(n, 1)
    dyads = np.asarray(dyads, dtype=np.intp)
    i, j = iu[dyads], ju[dyads]
    total = np.zeros(dyads.size)
    for start in range(0, charts.shape[0], chunk):
        d = draw_distances(charts[start : start + chunk], i, j, g)
        total += link_prob(d, r[start : start + chunk, None], alpha).sum(axis=0)
    return total / charts.shape[0]


def block_losses(p_hat, labels):
    """Mean log-loss and mean squared loss (Brier score) of one block."""
    p = np.asarray(p_hat, dtype=float)
    a = np.asarray(labels, dtype=float)
    if p.shape != a.shape or p.size == 0:
        raise UsageError("p_hat and labels must be nonempty and of equal length")
    if not np.all((p > 0) & (p < 1)):
        raise NumericalError("predicted probabilities must lie strictly inside (0, 1)")
    log_loss = -np.mean(a * np.log(p) + (1 - a) * np.log1p(-p))
    sq_loss = np.mean((p - a) ** 2)
    return float(log_loss), float(sq_loss)


# ---------------------------------------------------------------------------
# sweep configuration and results


@dataclass(frozen=True)
class SweepConfig:
    geometries: tuple = tuple(GeometryKind)
    eta_grid: tuple = DEFAULT_ETA_GRID
    K: int = 5
    rho: float = 0.2
    seed: int = 0
    chain_cfg: ChainConfig = field(default_factory=ChainConfig)
    hyper: Hyperparams = field(default_factory=Hyperparams)
    shuffle_seed: int | None = None

    def __post_init__(self):
        geoms = tuple(GeometryKind.parse(g) for g in self.geometries)
        object.__setattr__(self, "geometries", geoms)
        grid = tuple(float(e) for e in self.eta_grid)
        object.__setattr__(self, "eta_grid", grid)
        if not geoms:
            raise ConfigError("at least one geometry is required")
        if len(set(geoms)) != len(geoms):
            raise ConfigError("duplicate geometries")
        if not grid or any(not 0 < e <= 1 for e in grid):
            raise ConfigError("eta_grid must be nonempty with values in (0, 1]")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("eta_grid must be strictly increasing")
        if not 0 < self.rho < 1:
            raise ConfigError("rho must lie in (0, 1)")
        if self.K < 1:
            raise ConfigError("K must be >= 1")

    @property
    def partition_seed(self):
        return self.seed if self.shuffle_seed is None else self.shuffle_seed


@dataclass
class Cell:
    geometry: GeometryKind
    eta: float
    per_block_log_loss: list = field(default_factory=list)
    per_block_sq_loss: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    divergences: list = field(default_factory=list)
    predictions: list = field(default_factory=list)
    partition_digest: str = ""
    error: str | None = None

    @property
    def missing(self):
        return self.error is not None

    @property
    def cum_log_loss(self):
        return float(sum(self.per_block_log_loss)) if not self.missing else float("nan")

    @property
    def cum_sq_loss(self):
        return float(sum(self.per_block_sq_loss)) if not self.missing else float("nan")

    def prediction_array(self):
        """Predictions as an array, NaN where a dyad was never predicted."""
        return np.array([np.nan if p is None else p for p in self.predictions], dtype=float)

    def to_dict(self):
        return {
            "geometry": self.geometry.value,
            "eta": self.eta,
            "cum_log_loss": self.cum_log_loss if not self.missing else None,
            "cum_sq_loss": self.cum_sq_loss if not self.missing else None,
            "per_block_log_loss": list(self.per_block_log_loss),
            "per_block_sq_loss": list(self.per_block_sq_loss),
            "diagnostics": [d.to_dict() for d in self.diagnostics],
            "divergences": list(self.divergences),
            "predictions": list(self.predictions),
            "partition_digest": self.partition_digest,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            geometry=GeometryKind.parse(d["geometry"]),
            eta=float(d["eta"]),
            per_block_log_loss=list(d["per_block_log_loss"]),
            per_block_sq_loss=list(d["per_block_sq_loss"]),
            diagnostics=[Diagnostics.from_dict(x) for x in d["diagnostics"]],
            divergences=list(d["divergences"]),
            predictions=list(d["predictions"]),
            partition_digest=d["partition_digest"],
            error=d["error"],
        )


@dataclass
class RiskTable:
    cells: dict
    eta_star: dict = field(default_factory=dict)
    best_geometry: GeometryKind | None = None
    dataset: str = ""
    partition_digest: str = ""

    def cell(self, g, eta):
        return self.cells[(GeometryKind.parse(g), float(eta))]

    @property
    def geometries(self):
        seen = []
        for g, _ in self.cells:
            if g not in seen:
                seen.append(g)
        return seen

    def etas(self, g):
        g = GeometryKind.parse(g)
        return sorted(e for gg, e in self.cells if gg is g)

    def curve(self, g, kind="log"):
        """(etas, cumulative losses) for one geometry."""
        etas = self.etas(g)
        attr = "cum_log_loss" if kind == "log" else "cum_sq_loss"
        return np.array(etas), np.array([getattr(self.cell(g, e), attr) for e in etas])

    def to_dict(self):
        return {
            "dataset": self.dataset,
            "partition_digest": self.partition_digest,
            "cells": [c.to_dict() for c in self.cells.values()],
            "eta_star": {g.value: e for g, e in self.eta_star.items()},
            "best_geometry": self.best_geometry.value if self.best_geometry else None,
        }

    @classmethod
    def from_dict(cls, d):
        cells = {}
        for cd in d["cells"]:
            c = Cell.from_dict(cd)
            cells[(c.geometry, c.eta)] = c
        return cls(
            cells=cells,
            eta_star={GeometryKind.parse(g): float(e) for g, e in d["eta_star"].items()},
            best_geometry=GeometryKind.parse(d["best_geometry"]) if d["best_geometry"] else None,
            dataset=d.get("dataset", ""),
            partition_digest=d.get("partition_digest", ""),
        )

    def __eq__(self, other):
        if not isinstance(other, RiskTable):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def select_models(table):
    """eta* per geometry by cumulative log-loss, then the best geometry.

    Ties go to the smaller eta (more tempering) and to the geometry listed
    first. Geometries without any finished cell are skipped with a warning.
    """
    eta_star = {}
    for g in table.geometries:
        best = None
        for eta in table.etas(g):
            c = table.cell(g, eta)
            if c.missing:
                continue
            if best is None or c.cum_log_loss < best[1]:
                best = (eta, c.cum_log_loss)
        if best is None:
            warnings.warn(f"all cells failed for geometry {g.value}; excluded from selection")
            continue
        eta_star[g] = best[0]
    if not eta_star:
        raise SamplingError("every cell of the sweep failed")
    best_geometry = None
    best_loss = None
    for g, eta in eta_star.items():
        loss = table.cell(g, eta).cum_log_loss
        if best_loss is None or loss < best_loss:
            best_geometry, best_loss = g, loss
    return eta_star, best_geometry


# ---------------------------------------------------------------------------
# running


def cell_seed(seed, g, eta_index, block_index):
    """Deterministic integer seed for one (geometry, eta, block) fit."""
    ss = np.random.SeedSequence([int(seed), GeometryKind.parse(g).code, int(eta_index), int(block_index)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def invariant_summaries(batch, g, data_n_nodes):
    """Isometry-invariant scalars per draw: log-density, r, mean pairwise distance."""
    charts, r = draws_to_charts(batch.draws, g)
    iu, ju = np.triu_indices(data_n_nodes, 1)
    mean_d = np.empty(charts.shape[0])
    for start in range(0, charts.shape[0], 256):
        mean_d[start : start + 256] = draw_distances(charts[start : start + 256], iu, ju, g).mean(axis=1)
    shape = batch.logp.shape
    return {
        "logp": batch.logp,
        "r": r.reshape(shape),
        "mean_distance": mean_d.reshape(shape),
    }


def fit_block(data, train_dyads, g, h, chain_cfg, seed):
    """Sample the eta-posterior restricted to ``train_dyads``."""
    post = EtaPosterior(data, mask_from_indices(data.n_dyads, train_dyads), g, h)
    cfg = replace(chain_cfg, seed=seed)
    init_seeds = np.random.SeedSequence(seed).spawn(cfg.n_chains)

    def init(c):
        return sample_prior_state(data.n_nodes, g, h, init_seeds[c]).to_vector()

    return sample_posterior(post.logp, post.grad, init, cfg, value_and_grad_fn=post.logp_and_grad)


def run_cell(data, partition, g, eta_index, eta, cfg):
    """All K prequential steps for one (geometry, eta)."""
    g = GeometryKind.parse(g)
    h = cfg.hyper.with_eta(eta)
    cell = Cell(g, eta, partition_digest=partition.digest())
    predictions = np.full(data.n_dyads, np.nan)
    try:
        for k in range(1, partition.K + 1):
            train = partition.training_dyads(k)
            test = partition.test_blocks[k - 1]
            batch = fit_block(data, train, g, h, cfg.chain_cfg, cell_seed(cfg.seed, g, eta_index, k))
            p_hat = posterior_predictive(batch, test, g, h.alpha, data.n_nodes)
            ll, sq = block_losses(p_hat, data.labels[test])
            predictions[test] = p_hat
            cell.per_block_log_loss.append(ll)
            cell.per_block_sq_loss.append(sq)
            cell.diagnostics.append(summarize(invariant_summaries(batch, g, data.n_nodes)))
            cell.divergences.append(int(batch.divergence_count.sum()))
            log.info("%s eta=%.2f block %d/%d: log-loss %.4f", g.value, eta, k, partition.K, ll)
    except (SamplingError, NumericalError, FloatingPointError) as exc:
        cell.error = f"{type(exc).__name__}: {exc}"
        log.warning("cell (%s, %s) failed: %s", g.value, eta, cell.error)
    cell.predictions = [None if np.isnan(p) else float(p) for p in predictions]
    return cell


def n_workers():
    """Worker cap from RGG_THREADS, defaulting to all cores."""
    value = os.environ.get("RGG_THREADS")
    if value:
        try:
            n = int(value)
        except ValueError:
            raise ConfigError(f"RGG_THREADS must be an integer, got {value!r}") from None
        if n < 1:
            raise ConfigError("RGG_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def _run_cell_args(args):
    return run_cell(*args)


def run_sweep(data, cfg, dataset="", workers=None):
    """Prequential risk for every (geometry, eta) cell on one shared partition."""
    partition = partition_dyads(data.n_nodes, cfg.rho, cfg.K, cfg.partition_seed)
    jobs = [
        (data, partition, g, idx, eta, cfg)
        for g in cfg.geometries
        for idx, eta in enumerate(cfg.eta_grid)
    ]
    workers = n_workers() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            cells = list(pool.map(_run_cell_args, jobs))
    else:
        cells = [run_cell(*job) for job in jobs]
    table = RiskTable(
        cells={(c.geometry, c.eta): c for c in cells},
        dataset=dataset,
        partition_digest=partition.digest(),
    )
    table.eta_star, table.best_geometry = select_models(table)
    return table
