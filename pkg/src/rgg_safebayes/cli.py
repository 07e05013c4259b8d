"""Command-line entry point ``rgg-safebayes``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical or
sampling failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .config import ExperimentConfig, config_from_mapping, config_to_mapping, load_config
from .data_io import (
    EdgeListError,
    GeneratorSpec,
    cell_convergence,
    generate_hard_rgg,
    load_dataset,
    read_table_json,
    write_edge_list,
    write_results,
)
from .diagnostics import summarize
from .errors import ConfigError, NumericalError, SamplingError, UsageError
from .model import full_mask
from .prequential import fit_block, invariant_summaries

log = logging.getLogger("rgg_safebayes")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="rgg-safebayes", description="Tempered-posterior RGG latent space models.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "generate": "write a synthetic network as an edge list",
        "fit": "sample the eta-posterior on all dyads",
        "sweep": "prequential risk over the (geometry, eta) grid",
        "ablate": "repeat the sweep over K, rho or shuffle seeds",
        "demo": "pure state against mixture on the star or bipartite graph",
        "report": "overfitting gap and improvement histogram from a saved sweep",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", type=Path, help="YAML or JSON experiment file")
        p.add_argument("--dataset", help="bundled name or edge-list path (overrides the config)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path)
        p.add_argument("--geometry", action="append", help="repeatable or comma separated")
        p.add_argument("--eta-grid", help="comma separated, e.g. 0.1,0.5,1.0")
        p.add_argument("--blocks", type=int, help="number of test blocks K")
        p.add_argument("--rho", type=float, help="initial training fraction")
    return parser


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"not a comma-separated list of numbers: {text!r}") from None


def resolve_config(args):
    """Config file (or defaults) with command-line overrides applied."""
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    mapping = config_to_mapping(cfg)
    sweep = mapping["sweep"]
    if args.dataset:
        mapping["dataset"] = args.dataset
    if args.seed is not None:
        sweep["seed"] = args.seed
        if isinstance(mapping["dataset"], dict):
            mapping["dataset"]["seed"] = args.seed
        mapping["demo"]["seeds"] = [args.seed]
    if args.out is not None:
        mapping["output"] = str(args.out)
    if args.geometry:
        sweep["geometries"] = [g.strip() for item in args.geometry for g in item.split(",") if g.strip()]
    if args.eta_grid:
        sweep["eta_grid"] = _float_list(args.eta_grid)
    if args.blocks is not None:
        sweep["K"] = args.blocks
    if args.rho is not None:
        sweep["rho"] = args.rho
    return config_from_mapping(mapping)


def _require_dataset(cfg):
    if cfg.dataset is None:
        raise ConfigError("no dataset given (config 'dataset' or --dataset)")
    return load_dataset(cfg.dataset)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def cmd_generate(cfg):
    spec = cfg.dataset
    if not isinstance(spec, GeneratorSpec):
        raise ConfigError("generate needs a generator mapping as 'dataset'")
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    if spec.kind in ("poincare", "spherical", "euclidean"):
        data, pos = generate_hard_rgg(spec.kind, spec.n_nodes, spec.params.get("R"), spec.seed)
        cols = ["x", "y", "z"][: pos.shape[1]]
        _write_csv(out / "positions.csv", ["node", *cols], [[i, *row] for i, row in enumerate(pos)])
    else:
        data = spec.generate()
    write_edge_list(data, out / "edges.tsv")
    print(f"{data.n_nodes} nodes, {data.n_edges} edges -> {out / 'edges.tsv'}")


def cmd_fit(cfg):
    data = _require_dataset(cfg)
    sw = cfg.sweep
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    emb = []
    all_dyads = np.flatnonzero(full_mask(data))
    for g in sw.geometries:
        for idx, eta in enumerate(sw.eta_grid):
            batch = fit_block(data, all_dyads, g, sw.hyper.with_eta(eta), sw.chain_cfg, sw.seed + idx)
            rhat, ess = summarize(invariant_summaries(batch, g, data.n_nodes)).worst()
            rows.append([g.value, eta, ess, rhat, int(batch.divergence_count.sum()), float(batch.step_size.mean())])
            pos = analysis.posterior_mean_embedding(batch.draws, batch.logp, g)
            for node, row in enumerate(pos):
                emb.append([g.value, eta, node, *row, *[""] * (3 - len(row))])
            print(f"{g.value:12s} eta={eta:.2f}  ESS={ess:7.1f}  Rhat={rhat:.3f}")
    _write_csv(out / "fit_summary.csv", ["Geometry", "eta", "ESS", "Rhat", "Divergences", "StepSize"], rows)
    _write_csv(out / "embedding.csv", ["Geometry", "eta", "node", "x", "y", "z"], emb)


def cmd_sweep(cfg):
    from .prequential import run_sweep

    data = _require_dataset(cfg)
    table = run_sweep(data, cfg.sweep, dataset=cfg.dataset_label())
    write_results(table, cfg.output)
    for g, eta in table.eta_star.items():
        c = table.cell(g, eta)
        ess, rhat = cell_convergence(c)
        print(f"{g.value:12s} eta*={eta:.2f}  log-loss={c.cum_log_loss:.4f}  sq-loss={c.cum_sq_loss:.4f}")
    print(f"best geometry: {table.best_geometry.value}")


def cmd_ablate(cfg):
    if cfg.ablation is None:
        raise ConfigError("ablate needs an 'ablation' section in the config")
    data = _require_dataset(cfg)
    res = analysis.sensitivity_sweep(data, cfg.sweep, cfg.ablation, dataset=cfg.dataset_label())
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for g in cfg.sweep.geometries:
        etas, losses = res.curves(g)
        for value, curve, arg in zip(res.settings, losses, res.argmins(g)):
            rows.extend([g.value, cfg.ablation.vary, value, e, l, arg] for e, l in zip(etas, curve))
        if cfg.ablation.vary == "shuffle":
            mean, std = res.mean_curve(g), res.std_curve(g)
            arg = res.mean_argmin(g)
            rows.extend([g.value, "mean", "", e, m, arg] for e, m in zip(etas, mean))
            rows.extend([g.value, "std", "", e, s, ""] for e, s in zip(etas, std))
        print(f"{g.value:12s} eta* per setting: {dict(zip(res.settings, res.argmins(g)))}")
    _write_csv(out / "ablation.csv", ["Geometry", "vary", "value", "eta", "LogLoss", "EtaStar"], rows)
    for value, table in zip(res.settings, res.tables):
        table_dir = out / f"{cfg.ablation.vary}_{value}"
        write_results(table, table_dir)


def cmd_demo(cfg):
    d = cfg.demo
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in d.seeds:
        if d.kind == "star":
            r = analysis.star_graph_demo(d.M, d.alpha, d.n_starts, d.max_iter, seed)
            label = f"star M={d.M}"
        else:
            r = analysis.bipartite_demo(d.sizes, d.alpha, d.n_starts, d.max_iter, seed)
            label = f"bipartite {d.sizes[0]}x{d.sizes[1]}"
        rows.append([d.kind, label, seed, r.pure_state_loss, r.mixture_loss, r.mixture_wins, r.converged])
        flag = "" if r.converged else "  (optimizer did not converge; best found)"
        print(f"{label} seed={seed}: pure={r.pure_state_loss:.4f} mixture={r.mixture_loss:.4f}{flag}")
    _write_csv(out / "demo.csv", ["kind", "label", "seed", "PureLoss", "MixtureLoss", "MixtureWins", "Converged"], rows)


def cmd_report(cfg):
    out = Path(cfg.output)
    table = read_table_json(out / "risk_table.json")
    rows = analysis.overfitting_report(table)
    if not rows:
        raise ConfigError("the saved table has no selected cells")
    keys = list(rows[0].as_dict())
    _write_csv(out / "overfitting.csv", keys, [list(r.as_dict().values()) for r in rows])
    mean_log, mean_sq = analysis.mean_reductions(rows)
    hist_rows = []
    labels = None
    for r in rows:
        one = table.cells.get((r.geometry, 1.0))
        tag = "" if r.baseline_available else "  (no eta = 1 baseline)"
        print(
            f"{r.geometry.value:12s} eta*={r.eta_star:.2f}  log-loss reduction {r.rel_log_reduction:.1%}"
            f"  sq-loss reduction {r.rel_sq_reduction:.1%}{tag}"
        )
        if one is None or one.missing:
            continue
        p_safe = table.cell(r.geometry, r.eta_star).prediction_array()
        p_std = one.prediction_array()
        if labels is None:
            labels = _labels_for(cfg, p_safe.size)
        if labels is None:
            continue
        ok = ~(np.isnan(p_safe) | np.isnan(p_std))
        h = analysis.improvement_histogram(p_safe[ok], p_std[ok], labels[ok])
        for b in range(h.counts.size):
            hist_rows.append(
                [r.geometry.value, b, h.edges[b], h.edges[b + 1], int(h.counts[b]),
                 h.mean_improvement[b], h.cumulative_gain[b]]
            )
    if hist_rows:
        _write_csv(
            out / "improvement.csv",
            ["Geometry", "bin", "ErrorLow", "ErrorHigh", "Count", "MeanImprovement", "CumulativeGain"],
            hist_rows,
        )
    print(f"unweighted mean reduction: log {mean_log:.1%}, sq {mean_sq:.1%}")


def _labels_for(cfg, n_dyads):
    if cfg.dataset is None:
        log.warning("no dataset in the config; skipping the improvement histogram")
        return None
    data = load_dataset(cfg.dataset)
    if data.n_dyads != n_dyads:
        raise ConfigError("dataset does not match the saved risk table")
    return data.labels.astype(float)


COMMANDS = {
    "generate": cmd_generate,
    "fit": cmd_fit,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
    "demo": cmd_demo,
    "report": cmd_report,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg)
    except (EdgeListError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, SamplingError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
