import csv
import json

import pytest
import yaml

from rgg_safebayes.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, build_parser, main, resolve_config
from rgg_safebayes.config import config_from_mapping, config_to_mapping, load_config
from rgg_safebayes.data_io import GeneratorSpec
from rgg_safebayes.errors import ConfigError, UsageError
from rgg_safebayes.manifold import GeometryKind

TINY_SWEEP = {
    "geometries": ["euclidean"],
    "eta_grid": [0.5, 1.0],
    "K": 2,
    "rho": 0.3,
    "chain_cfg": {"n_chains": 1, "n_warmup": 30, "n_samples": 20},
}


def _write_config(tmp_path, mapping):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(mapping))
    return path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_exit_codes(tmp_path, capsys):
    assert main(["fit", "--dataset", str(tmp_path / "nope.txt"), "--out", str(tmp_path)]) == EXIT_IO
    assert main(["sweep", "--seed", "abc"]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["sweep", "--geometry", "klein", "--dataset", "karate"]) == EXIT_USAGE
    assert main(["sweep", "--out", str(tmp_path)]) == EXIT_USAGE  # no dataset
    assert "error:" in capsys.readouterr().err


def test_unknown_config_key_is_usage_error(tmp_path):
    cfg = _write_config(tmp_path, {"dataset": "karate", "sweep": {"etagrid": [0.5]}})
    assert main(["sweep", "--config", str(cfg)]) == EXIT_USAGE
    with pytest.raises(ConfigError, match="etagrid"):
        load_config(cfg)
    with pytest.raises(ConfigError):
        config_from_mapping({"datasets": "karate"})


def test_malformed_yaml(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("sweep: [unclosed\n")
    assert main(["sweep", "--config", str(path)]) == EXIT_USAGE


def test_config_roundtrip():
    cfg = config_from_mapping(
        {
            "dataset": {"kind": "poincare", "n_nodes": 30, "seed": 4},
            "sweep": {**TINY_SWEEP, "hyper": {"alpha": 3.0}},
            "ablation": {"vary": "rho", "values": [0.1, 0.2]},
        }
    )
    assert isinstance(cfg.dataset, GeneratorSpec)
    assert cfg.sweep.hyper.alpha == 3.0
    assert config_from_mapping(config_to_mapping(cfg)) == cfg


def test_flag_overrides():
    args = build_parser().parse_args(
        ["sweep", "--dataset", "karate", "--eta-grid", "0.2,0.6,1.0", "--geometry", "euclidean,spherical",
         "--geometry", "hyperboloid", "--blocks", "3", "--rho", "0.25", "--seed", "7"]
    )
    cfg = resolve_config(args)
    assert cfg.sweep.eta_grid == (0.2, 0.6, 1.0)
    assert cfg.sweep.geometries == tuple(GeometryKind)
    assert (cfg.sweep.K, cfg.sweep.rho, cfg.sweep.seed) == (3, 0.25, 7)
    assert cfg.dataset == "karate"
    bad = build_parser().parse_args(["sweep", "--eta-grid", "0.2,x"])
    with pytest.raises(UsageError):
        resolve_config(bad)


def test_generate(tmp_path):
    cfg = _write_config(tmp_path, {"dataset": {"kind": "spherical", "n_nodes": 20, "seed": 1}})
    out = tmp_path / "gen"
    assert main(["generate", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    assert (out / "edges.tsv").exists()
    assert len(_rows(out / "positions.csv")) == 20


def test_sweep_then_report(tmp_path):
    cfg = _write_config(
        tmp_path, {"dataset": {"kind": "euclidean", "n_nodes": 10, "seed": 2}, "sweep": TINY_SWEEP}
    )
    out = tmp_path / "run"
    assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    table = json.loads((out / "risk_table.json").read_text())
    assert table["dataset"] == "euclidean-n10-s2"
    assert len(_rows(out / "curves.csv")) == 2
    assert main(["report", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    (row,) = _rows(out / "overfitting.csv")
    assert row["geometry"] == "euclidean"
    hist = _rows(out / "improvement.csv")
    assert sum(int(r["Count"]) for r in hist) > 0


def test_fit_writes_embedding(tmp_path):
    cfg = _write_config(tmp_path, {"dataset": {"kind": "sbm5", "n_nodes": 10, "seed": 0}, "sweep": TINY_SWEEP})
    out = tmp_path / "fit"
    assert main(["fit", "--config", str(cfg), "--out", str(out), "--eta-grid", "1.0"]) == EXIT_OK
    assert len(_rows(out / "fit_summary.csv")) == 1
    assert len(_rows(out / "embedding.csv")) == 10


def test_ablate(tmp_path):
    cfg = _write_config(
        tmp_path,
        {
            "dataset": {"kind": "euclidean", "n_nodes": 8, "seed": 3},
            "sweep": TINY_SWEEP,
            "ablation": {"vary": "shuffle", "values": [0, 1]},
        },
    )
    out = tmp_path / "abl"
    assert main(["ablate", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    rows = _rows(out / "ablation.csv")
    assert {r["vary"] for r in rows} == {"shuffle", "mean", "std"}
    assert (out / "shuffle_0" / "risk_table.json").exists()


def test_demo(tmp_path):
    cfg = _write_config(tmp_path, {"demo": {"kind": "bipartite", "sizes": [2, 1], "n_starts": 2, "seeds": [0]}})
    assert main(["demo", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_OK
    (row,) = _rows(tmp_path / "demo.csv")
    assert float(row["MixtureLoss"]) == pytest.approx(1.3863, abs=1e-4)
