import csv
import json
import math

import numpy as np
import pytest

from oracles import great_circle
from rgg_safebayes.data_io import (
    EdgeListError,
    GeneratorSpec,
    default_threshold,
    generate_core_periphery,
    generate_hard_rgg,
    generate_sbm5,
    load_bundled,
    load_dataset,
    load_edge_list,
    read_table_json,
    sbm_communities,
    source_distances,
    write_edge_list,
    write_results,
)
from rgg_safebayes.diagnostics import Diagnostics
from rgg_safebayes.errors import UsageError
from rgg_safebayes.manifold import GeometryKind
from rgg_safebayes.prequential import Cell, RiskTable, select_models

# ---------------------------------------------------------------------------
# hard-threshold RGGs


@pytest.mark.parametrize("source", ["euclidean", "spherical", "poincare"])
def test_threshold_limits(source):
    full, _ = generate_hard_rgg(source, 15, R=1e6, seed=0)
    assert full.n_edges == full.n_dyads
    empty, _ = generate_hard_rgg(source, 15, R=1e-12, seed=0)
    assert empty.n_edges == 0


def test_spherical_density_matches_bruteforce():
    data, pos = generate_hard_rgg("spherical", 50, R=math.pi / 4, seed=5)
    count = sum(great_circle(pos[i], pos[j]) < math.pi / 4 for i in range(50) for j in range(i + 1, 50))
    assert data.n_edges == count


def test_poincare_positions_inside_disk_and_distances():
    _, pos = generate_hard_rgg("poincare", 200, seed=1)
    assert np.all(np.linalg.norm(pos, axis=1) < 1)
    d = source_distances("poincare", pos[:3])
    # disk distance via the cross ratio form
    u, v = pos[0], pos[1]
    ref = math.acosh(1 + 2 * np.sum((u - v) ** 2) / ((1 - u @ u) * (1 - v @ v)))
    assert d[0, 1] == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("source", ["euclidean", "spherical", "poincare"])
def test_default_threshold_hits_target_density(source):
    dens = np.mean([generate_hard_rgg(source, 60, seed=s)[0].density for s in range(20)])
    assert abs(dens - 0.15) < 0.02


def test_rgg_determinism_and_validation():
    a, pa = generate_hard_rgg("euclidean", 20, seed=3)
    b, pb = generate_hard_rgg("euclidean", 20, seed=3)
    assert a == b and np.array_equal(pa, pb)
    with pytest.raises(UsageError):
        generate_hard_rgg("klein", 20)
    with pytest.raises(UsageError):
        generate_hard_rgg("euclidean", 20, R=-1.0)
    assert default_threshold("spherical") == pytest.approx(math.acos(0.7))


# ---------------------------------------------------------------------------
# SBM and core-periphery


def test_sbm_cliques():
    data, comm = generate_sbm5(50, p_in=1.0, p_out=0.0, seed=0)
    assert np.bincount(comm).tolist() == [10] * 5
    adj = data.adjacency()
    same = comm[:, None] == comm[None, :]
    np.fill_diagonal(same, False)
    assert np.array_equal(adj.astype(bool), same)


def test_sbm_erdos_renyi_limit():
    p = 0.2
    dens = [generate_sbm5(30, p, p, seed=s)[0].density for s in range(100)]
    se = math.sqrt(p * (1 - p) / (435 * 100))
    assert abs(np.mean(dens) - p) < 3 * se


def test_sbm_community_sizes_uneven():
    assert np.bincount(sbm_communities(52)).tolist() == [11, 11, 10, 10, 10]


def test_core_periphery_structure():
    data = generate_core_periphery(50, core_frac=0.2, p_cc=1.0, p_cp=1.0, p_pp=0.0, seed=0)
    adj = data.adjacency()
    core = np.arange(50) < 10
    assert core.sum() == 10
    per = ~core
    assert adj[np.ix_(per, per)].sum() == 0
    # any two periphery nodes share every core neighbour yet are not adjacent
    assert np.all(adj[np.ix_(per, core)] == 1)


def test_core_periphery_block_densities():
    pcc, pcp, ppp = 0.7, 0.3, 0.05
    core = np.arange(40) < 8
    iu, ju = np.triu_indices(40, 1)
    kind = core[iu].astype(int) + core[ju].astype(int)
    sums = np.zeros(3)
    for s in range(100):
        lab = generate_core_periphery(40, 0.2, pcc, pcp, ppp, seed=s).labels
        for k in range(3):
            sums[k] += lab[kind == k].mean()
    counts = np.bincount(kind)
    for k, p in zip((2, 1, 0), (pcc, pcp, ppp)):
        se = math.sqrt(p * (1 - p) / (counts[k] * 100))
        assert abs(sums[k] / 100 - p) < 3 * se


def test_generator_spec():
    d = GeneratorSpec("sbm5", 25, seed=2).generate()
    assert d.n_nodes == 25
    assert load_dataset(GeneratorSpec("poincare", 20, seed=1)) == generate_hard_rgg("poincare", 20, seed=1)[0]
    with pytest.raises(UsageError):
        GeneratorSpec("lattice")


# ---------------------------------------------------------------------------
# edge lists


def test_edge_list_examples(tmp_path):
    f = tmp_path / "g.txt"
    f.write_text("% comment\n1 2\n2 3\n")
    d = load_edge_list(f)
    assert d.n_nodes == 3 and d.edges() == [(0, 1), (1, 2)]
    f.write_text("1 2\n2 1\n1 2 0.5\n# note\n\n3 3\n")
    d = load_edge_list(f)
    assert d.n_nodes == 3 and d.edges() == [(0, 1)]


def test_edge_list_errors(tmp_path):
    f = tmp_path / "bad.txt"
    f.write_text("1 2\n3\n")
    with pytest.raises(EdgeListError) as info:
        load_edge_list(f)
    assert info.value.line == 2
    f.write_text("1 x\n")
    with pytest.raises(EdgeListError):
        load_edge_list(f)
    f.write_text("% only comments\n")
    with pytest.raises(EdgeListError):
        load_edge_list(f)
    with pytest.raises(OSError):
        load_edge_list(tmp_path / "missing.txt")


def test_bundled_fixtures():
    k = load_bundled("karate")
    assert (k.n_nodes, k.n_edges) == (34, 78)
    les = load_bundled("lesmis")
    assert (les.n_nodes, les.n_edges) == (77, 254)
    with pytest.raises(UsageError):
        load_bundled("dolphins-missing")


def test_edge_list_roundtrip(tmp_path):
    d = generate_sbm5(30, seed=4)[0]
    write_edge_list(d, tmp_path / "e.tsv")
    back = load_edge_list(tmp_path / "e.tsv")
    # ids are re-labelled by first appearance; isolated nodes vanish
    assert back.n_edges == d.n_edges
    assert sorted(np.bincount(np.ravel(back.edges()))) == sorted(
        x for x in np.bincount(np.ravel(d.edges()), minlength=30) if x
    )


# ---------------------------------------------------------------------------
# results


def _toy_table():
    cells = {}
    for g in (GeometryKind.EUCLIDEAN, GeometryKind.HYPERBOLOID):
        for eta, base in ((0.5, 0.4), (1.0, 0.5)):
            c = Cell(g, eta, [base, base + 0.1], [0.1, 0.12], [Diagnostics({"r": 1.01}, {"r": 300.0})] * 2,
                     [0, 0], predictions=[None, 0.3, 0.6])
            cells[(g, eta)] = c
    t = RiskTable(cells, dataset="toy")
    t.eta_star, t.best_geometry = select_models(t)
    return t


def test_write_results(tmp_path):
    t = _toy_table()
    paths = write_results(t, tmp_path)
    assert {p.name for p in paths} == {"summary.csv", "curves.csv", "risk_table.json"}
    with open(tmp_path / "curves.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 * 2
    assert float(next(r for r in rows if r["eta"] == "1.0")["RelLogLoss"]) == 1.0
    with open(tmp_path / "summary.csv") as fh:
        summary = list(csv.DictReader(fh))
    assert list(summary[0]) == ["Dataset", "Geometry", "eta", "LogLoss", "SqLoss", "ESS", "Rhat"]
    assert {r["eta"] for r in summary} == {"0.5"}
    json.loads((tmp_path / "risk_table.json").read_text())
    assert read_table_json(tmp_path / "risk_table.json") == t


def test_write_results_with_embedding(tmp_path):
    t = _toy_table()
    paths = write_results(t, tmp_path, positions={"euclidean": np.zeros((3, 2))})
    assert (tmp_path / "embedding.csv") in paths
    assert len((tmp_path / "embedding.csv").read_text().splitlines()) == 4
