"""Synthetic benchmark networks, edge-list loading and result files."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import UsageError
from .manifold import GeometryKind
from .model import DyadData

POINCARE_MAX_RADIUS = 3.0
TARGET_DENSITY = 0.15

GENERATOR_KINDS = ("sbm5", "poincare", "spherical", "euclidean", "core_periphery")


class EdgeListError(ValueError):
    """Malformed or empty edge-list file."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


# ---------------------------------------------------------------------------
# latent position samplers and distances


def _sample_positions(source, n, rng):
    if source == "euclidean":
        return rng.standard_normal((n, 2))
    if source == "spherical":
        x = rng.standard_normal((n, 3))
        return x / np.linalg.norm(x, axis=1, keepdims=True)
    if source == "poincare":
        # uniform area on a hyperbolic disk: P(radius <= t) ~ cosh(t) - 1
        u = rng.random(n)
        hyp_r = np.arccosh(1.0 + u * (np.cosh(POINCARE_MAX_RADIUS) - 1.0))
        theta = rng.uniform(0.0, 2.0 * np.pi, n)
        rad = np.tanh(hyp_r / 2.0)
        return np.column_stack([rad * np.cos(theta), rad * np.sin(theta)])
    raise UsageError(f"unknown RGG source geometry {source!r}")


def source_distances(source, pos):
    """Full pairwise distance matrix under the generator's own metric."""
    if source == "euclidean":
        diff = pos[:, None, :] - pos[None, :, :]
        return np.sqrt(np.sum(diff**2, axis=-1))
    if source == "spherical":
        cross = np.linalg.norm(np.cross(pos[:, None, :], pos[None, :, :]), axis=-1)
        return np.arctan2(cross, pos @ pos.T)
    if source == "poincare":
        sq = np.sum(pos**2, axis=1)
        diff2 = np.sum((pos[:, None, :] - pos[None, :, :]) ** 2, axis=-1)
        arg = 2.0 * diff2 / ((1.0 - sq)[:, None] * (1.0 - sq)[None, :])
        return np.arccosh(1.0 + arg)
    raise UsageError(f"unknown RGG source geometry {source!r}")


def default_threshold(source, density=TARGET_DENSITY):
    """Radius R giving the target expected edge density for ``source``."""
    if source == "euclidean":
        # |z_i - z_j|^2 / 2 ~ chi^2_2 for standard normal positions
        return float(np.sqrt(-4.0 * np.log1p(-density)))
    if source == "spherical":
        return float(np.arccos(1.0 - 2.0 * density))
    if source == "poincare":
        return _poincare_threshold(density)
    raise UsageError(f"unknown RGG source geometry {source!r}")


def _poincare_threshold(density, n_mc=400_000):
    rng = np.random.default_rng(20240601)
    a = _sample_positions("poincare", n_mc, rng)
    b = _sample_positions("poincare", n_mc, rng)
    sq_a = np.sum(a**2, axis=1)
    sq_b = np.sum(b**2, axis=1)
    d = np.arccosh(1.0 + 2.0 * np.sum((a - b) ** 2, axis=1) / ((1 - sq_a) * (1 - sq_b)))
    return float(np.quantile(d, density))


def generate_hard_rgg(source, n, R=None, seed=0):
    """Hard-threshold RGG: edge iff the latent distance is below ``R``.

    ``source`` is one of 'euclidean', 'spherical', 'poincare'. Returns
    ``(data, positions)``; positions are the ground truth in the source
    coordinates (Poincare-disk coordinates for 'poincare').
    """
    source = GeometryKind.parse(source).value if source != "poincare" else source
    if n < 3:
        raise UsageError("need at least 3 nodes")
    if R is None:
        R = default_threshold(source)
    if not R > 0:
        raise UsageError("threshold radius must be positive")
    rng = np.random.default_rng(seed)
    pos = _sample_positions(source, n, rng)
    dist = source_distances(source, pos)
    iu, ju = np.triu_indices(n, 1)
    labels = (dist[iu, ju] < R).astype(np.int8)
    return DyadData(n, labels), pos


def sbm_communities(n, k=5):
    """Community label per node, sizes as equal as possible."""
    return np.repeat(np.arange(k), [len(b) for b in np.array_split(np.arange(n), k)])


def generate_sbm5(n, p_in=0.6, p_out=0.05, seed=0):
    """Five-block SBM; returns ``(data, community_labels)``."""
    if n < 10:
        raise UsageError("need at least 10 nodes")
    if not (0 <= p_in <= 1 and 0 <= p_out <= 1):
        raise UsageError("p_in and p_out must lie in [0, 1]")
    comm = sbm_communities(n)
    iu, ju = np.triu_indices(n, 1)
    prob = np.where(comm[iu] == comm[ju], p_in, p_out)
    rng = np.random.default_rng(seed)
    labels = (rng.random(iu.size) < prob).astype(np.int8)
    return DyadData(n, labels), comm


def generate_core_periphery(n, core_frac=0.2, p_cc=0.9, p_cp=0.3, p_pp=0.02, seed=0):
    """Core nodes are 0..n_core-1; dyads are Bernoulli by block."""
    if not 0 < core_frac < 1:
        raise UsageError("core_frac must lie in (0, 1)")
    for p in (p_cc, p_cp, p_pp):
        if not 0 <= p <= 1:
            raise UsageError("probabilities must lie in [0, 1]")
    n_core = int(np.floor(core_frac * n + 0.5))
    core = np.arange(n) < n_core
    iu, ju = np.triu_indices(n, 1)
    n_in_core = core[iu].astype(int) + core[ju].astype(int)
    prob = np.choose(n_in_core, [p_pp, p_cp, p_cc])
    rng = np.random.default_rng(seed)
    return DyadData(n, (rng.random(iu.size) < prob).astype(np.int8))


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str
    n_nodes: int = 50
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in GENERATOR_KINDS:
            raise UsageError(f"unknown generator {self.kind!r}; expected one of {GENERATOR_KINDS}")

    def generate(self):
        """Build the network; returns DyadData."""
        p = dict(self.params)
        if self.kind == "sbm5":
            return generate_sbm5(self.n_nodes, seed=self.seed, **p)[0]
        if self.kind == "core_periphery":
            return generate_core_periphery(self.n_nodes, seed=self.seed, **p)
        return generate_hard_rgg(self.kind, self.n_nodes, p.get("R"), self.seed)[0]


# ---------------------------------------------------------------------------
# edge lists


def load_edge_list(path):
    """Read a KONECT-style edge list into DyadData.

    Node ids are remapped to 0..N-1 in order of first appearance; weights,
    duplicate edges and self-loops are dropped.
    """
    ids = {}
    edges = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text or text[0] in "%#":
                continue
            parts = text.split()
            if len(parts) < 2:
                raise EdgeListError(f"expected 'source target [weight]', got {text!r}", lineno)
            try:
                u, v = int(parts[0]), int(parts[1])
                for extra in parts[2:]:
                    float(extra)
            except ValueError:
                raise EdgeListError(f"non-numeric field in {text!r}", lineno) from None
            for node in (u, v):
                if node not in ids:
                    ids[node] = len(ids)
            if u != v:
                edges.append((ids[u], ids[v]))
    if not edges:
        raise EdgeListError(f"no edges in {path}")
    return DyadData.from_edges(len(ids), edges)


def write_edge_list(data, path):
    """Write 1-based ids, one edge per line."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"% undirected unweighted, {data.n_nodes} nodes, {data.n_edges} edges\n")
        for i, j in data.edges():
            fh.write(f"{i + 1} {j + 1}\n")


BUNDLED = {"karate": "karate.tsv", "lesmis": "lesmis.tsv"}


def bundled_path(name):
    return resources.files("rgg_safebayes").joinpath("datasets").joinpath(BUNDLED[name])


def load_bundled(name):
    """Bundled fixtures: 'karate' (34 nodes, 78 edges) and 'lesmis'."""
    if name not in BUNDLED:
        raise UsageError(f"no bundled dataset {name!r}; available: {sorted(BUNDLED)}")
    with resources.as_file(bundled_path(name)) as p:
        return load_edge_list(p)


def load_dataset(source):
    """A bundled name, an edge-list path, or a GeneratorSpec."""
    if isinstance(source, GeneratorSpec):
        return source.generate()
    if isinstance(source, str) and source in BUNDLED:
        return load_bundled(source)
    return load_edge_list(source)


# ---------------------------------------------------------------------------
# results


SUMMARY_COLUMNS = ["Dataset", "Geometry", "eta", "LogLoss", "SqLoss", "ESS", "Rhat"]


def cell_convergence(cell):
    """(ESS, R-hat) reported for a cell: worst summary of its last block."""
    if cell.missing or not cell.diagnostics:
        return float("nan"), float("nan")
    rhat, ess = cell.diagnostics[-1].worst()
    return ess, rhat


def write_results(table, out_dir, positions=None, dataset=None):
    """Write summary.csv, curves.csv, risk_table.json and optionally embedding.csv.

    ``positions`` maps a label (e.g. geometry name) to an (n, D) array of
    aligned coordinates. Returns the list of written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = dataset if dataset is not None else table.dataset
    written = []

    path = out / "summary.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for g, eta in table.eta_star.items():
            c = table.cell(g, eta)
            ess, rhat = cell_convergence(c)
            w.writerow([name, g.value, eta, c.cum_log_loss, c.cum_sq_loss, ess, rhat])
    written.append(path)

    path = out / "curves.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["Geometry", "eta", "LogLoss", "SqLoss", "RelLogLoss", "RelSqLoss", "ESS", "Rhat"])
        for g in table.geometries:
            base = table.cells.get((g, 1.0))
            for eta in table.etas(g):
                c = table.cell(g, eta)
                ess, rhat = cell_convergence(c)
                rel_log = c.cum_log_loss / base.cum_log_loss if base and not base.missing else float("nan")
                rel_sq = c.cum_sq_loss / base.cum_sq_loss if base and not base.missing else float("nan")
                w.writerow([g.value, eta, c.cum_log_loss, c.cum_sq_loss, rel_log, rel_sq, ess, rhat])
    written.append(path)

    path = out / "risk_table.json"
    write_table_json(table, path)
    written.append(path)

    if positions:
        path = out / "embedding.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["label", "node", "x", "y", "z"])
            for label, pos in positions.items():
                pos = np.asarray(pos, dtype=float)
                for node, row in enumerate(pos):
                    coords = list(row) + [""] * (3 - len(row))
                    w.writerow([label, node, *coords])
        written.append(path)
    return written


def write_table_json(table, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(table.to_dict(), fh, indent=1, allow_nan=True)
        fh.write(os.linesep)


def read_table_json(path):
    from .prequential import RiskTable

    with open(path, encoding="utf-8") as fh:
        return RiskTable.from_dict(json.load(fh))
