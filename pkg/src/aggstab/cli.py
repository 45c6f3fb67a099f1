"""Command-line front end: graph generation, ingestion, training, certification, sweeps.

Exit codes: 0 success, 2 usage or input error, 3 data-semantics error,
4 numeric-domain error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import datasets, report, sweep
from .datasets import DataError, SimilarityGraphConfig
from .filters import Omega, estimate_lipschitz_bank
from .graph import Graph, build_shift_from_adjacency, graph_from_json, graph_to_json, random_graph
from .model import CnnLayerSpec, PoolSpec, init_model, model_from_json, model_to_json
from .sweep import OmegaCoverageError, SweepConfig, _mix_seed, bound_check, run_sweep
from .training import LossSpec, OptimizerState, train

_SECTION_KEYS = {
    "graph": {"path", "model", "n", "p", "blocks", "p_in", "p_out", "normalization"},
    "dataset": {"kind", "ratings", "movies", "target_item", "min_common", "top_k",
                "negative_policy", "min_ratings_per_user", "diffusion_steps", "samples"},
    "model": {"a", "first_layer_mode", "readout", "layers", "checkpoint"},
    "loss": {"smooth_l1_beta", "penalty_l0_weight", "penalty_l1_weight",
             "l0_target", "l1_target", "omega"},
    "optimizer": {"lr", "beta1", "beta2", "eps", "epochs", "batch_size"},
    "sweep": {"epsilons", "trials", "kind", "probe_signals", "bound_layer", "slack", "omega"},
}
_TOP_KEYS = set(_SECTION_KEYS) | {"seed", "output_dir"}


def load_config(path) -> dict:
    """Parse and validate a run config; unknown keys are rejected."""
    path = Path(path)
    cfg = json.loads(path.read_text())
    unknown = set(cfg) - _TOP_KEYS
    if unknown:
        raise ValueError(f"config has unknown keys: {sorted(unknown)}")
    if "seed" not in cfg:
        raise ValueError("config must carry a seed")
    for section, allowed in _SECTION_KEYS.items():
        body = cfg.get(section)
        if body is None:
            continue
        extra = set(body) - allowed
        if extra:
            raise ValueError(f"config section {section!r} has unknown keys: {sorted(extra)}")
    for ref in (cfg.get("graph", {}).get("path"),
                cfg.get("dataset", {}).get("ratings"),
                cfg.get("model", {}).get("checkpoint")):
        if ref is not None and not Path(ref).exists():
            raise ValueError(f"referenced file does not exist: {ref}")
    env_seed = os.environ.get("AGGSTAB_SEED")
    if env_seed is not None:
        cfg["seed"] = int(env_seed)
    return cfg


def _graph_from_config(cfg: dict, seed: int) -> Graph:
    section = cfg.get("graph")
    if not section:
        raise ValueError("config needs a graph section")
    if "path" in section:
        return graph_from_json(Path(section["path"]).read_text())
    model = section.get("model", "erdos_renyi")
    g = random_graph(model, int(section["n"]), _mix_seed(seed, 1),
                     p=section.get("p"), blocks=section.get("blocks"),
                     p_in=section.get("p_in"), p_out=section.get("p_out"))
    normalization = section.get("normalization", "none")
    if normalization != "none":
        g = build_shift_from_adjacency(g.shift, normalization)
    return g


def _task_from_config(cfg: dict, graph: Graph, seed: int):
    section = cfg.get("dataset")
    if not section:
        raise ValueError("config needs a dataset section")
    kind = section.get("kind", "synthetic")
    if kind == "synthetic":
        return datasets.synthetic_source_localization(
            graph,
            diffusion_steps=int(section.get("diffusion_steps", 2)),
            samples=int(section.get("samples", 64)),
            seed=_mix_seed(seed, 2),
        )
    if kind == "movielens":
        table = datasets.parse_movielens(section["ratings"])
        return datasets.build_rating_task(
            table, graph, int(section["target_item"]),
            int(section.get("min_ratings_per_user", 1)),
            seed=_mix_seed(seed, 2),
        )
    raise ValueError(f"unknown dataset kind {kind!r}")


def _loss_from_config(cfg: dict) -> LossSpec:
    section = dict(cfg.get("loss") or {})
    omega = section.pop("omega", None)
    if omega is not None:
        section["omega"] = Omega(float(omega["lo"]), float(omega["hi"]),
                                 int(omega.get("grid_points", 2048)))
    return LossSpec(**section)


def _model_from_config(cfg: dict, graph: Graph, seed: int):
    section = cfg.get("model")
    if not section:
        raise ValueError("config needs a model section")
    if "checkpoint" in section:
        return model_from_json(Path(section["checkpoint"]).read_text())
    specs = []
    features_in = 1
    for layer in section["layers"]:
        pool = layer.get("pool") or {}
        specs.append(CnnLayerSpec(
            taps=int(layer["taps"]),
            features_in=features_in,
            features_out=int(layer.get("features_out", 1)),
            nonlinearity=layer.get("nonlinearity", "relu"),
            pool=PoolSpec(kind=pool.get("kind", "none"), stride=int(pool.get("stride", 1))),
        ))
        features_in = specs[-1].features_out
    return init_model(int(section["a"]), specs, _mix_seed(seed, 3),
                      first_layer_mode=section.get("first_layer_mode", "shared"),
                      n_nodes=graph.n, readout=section.get("readout", "sum"))


def _out_dir(cfg: dict, override: str | None) -> Path:
    out = Path(override or cfg.get("output_dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_graph(args) -> int:
    model = {"er": "erdos_renyi", "erdos_renyi": "erdos_renyi", "sbm": "sbm"}.get(args.model)
    if model is None:
        print(f"--model: unknown graph model {args.model!r}", file=sys.stderr)
        return 2
    if model == "erdos_renyi" and not 0.0 <= args.p <= 1.0:
        print(f"--p: probability {args.p} outside [0, 1]", file=sys.stderr)
        return 2
    if model == "sbm":
        for flag, value in (("--p-in", args.p_in), ("--p-out", args.p_out)):
            if value is None or not 0.0 <= value <= 1.0:
                print(f"{flag}: probability must lie in [0, 1]", file=sys.stderr)
                return 2
    g = random_graph(model, args.n, args.seed, p=args.p, blocks=args.blocks,
                     p_in=args.p_in, p_out=args.p_out)
    if args.normalization != "none":
        g = build_shift_from_adjacency(g.shift, args.normalization)
    Path(args.out).write_text(graph_to_json(g) + "\n")
    return 0


def cmd_ingest(args) -> int:
    table = datasets.parse_movielens(args.ratings)
    if args.movies:
        movies = [int(tok) for tok in args.movies.split(",")]
    else:
        movies = datasets.most_rated_items(table, args.top_movies)
    cfg = SimilarityGraphConfig(min_common=args.min_common, top_k=args.top_k,
                                negative_policy=args.negative_policy)
    graph = datasets.pearson_similarity_graph(table, movies, cfg)
    target = args.target if args.target is not None else movies[0]
    task = datasets.build_rating_task(table, graph, target, args.min_ratings_per_user,
                                      seed=args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "graph.json").write_text(graph_to_json(graph) + "\n")
    (out / "task.json").write_text(datasets.task_to_json(task) + "\n")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    seed = int(cfg["seed"])
    graph = _graph_from_config(cfg, seed)
    task = _task_from_config(cfg, graph, seed)
    model = _model_from_config(cfg, graph, seed)
    loss = _loss_from_config(cfg)
    opt = dict(cfg.get("optimizer") or {})
    epochs = args.epochs if args.epochs is not None else int(opt.pop("epochs", 50))
    batch_size = args.batch_size if args.batch_size is not None else int(opt.pop("batch_size", 10))
    opt.pop("epochs", None)
    opt.pop("batch_size", None)
    state = OptimizerState(**opt)
    trained, history = train(model, task, loss, epochs=epochs, batch_size=batch_size,
                             seed=_mix_seed(seed, 4), optimizer=state)
    out = _out_dir(cfg, args.out_dir)
    (out / "checkpoint.json").write_text(model_to_json(trained) + "\n")
    lines = ["epoch,train_loss,penalty,test_loss"]
    for row in history:
        lines.append(f"{row['epoch']},{row['train_loss']!r},{row['penalty']!r},{row['test_loss']!r}")
    (out / "history.csv").write_text("\n".join(lines) + "\n")
    return 0


def cmd_certify(args) -> int:
    model = model_from_json(Path(args.checkpoint).read_text())
    if args.graph is not None:
        n = graph_from_json(Path(args.graph).read_text()).n
    elif args.n is not None:
        n = args.n
    else:
        print("--n or --graph is required to evaluate the stability constants",
              file=sys.stderr)
        return 2
    omega = Omega(args.omega_lo, args.omega_hi, args.grid_points)
    est = estimate_lipschitz_bank(model.first_layer_filters(), omega)
    scale = n * float(np.sqrt(model.a + 1.0))
    doc = {
        "L0": est.L0,
        "L1": est.L1,
        "pass": bool(est.L0 <= args.l0_max and est.L1 <= args.l1_max),
        "omega": [omega.lo, omega.hi],
        "grid_points": omega.grid_points,
        "C0": scale * est.L0,
        "C1": scale * est.L1,
        "n": n,
        "a": model.a,
    }
    print(json.dumps(doc, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    seed = int(cfg["seed"])
    graph = _graph_from_config(cfg, seed)
    model = _model_from_config(cfg, graph, seed)
    section = dict(cfg.get("sweep") or {})
    slack = float(section.pop("slack", 1.1))
    omega_doc = section.pop("omega", None)
    sweep_cfg = SweepConfig(
        epsilons=tuple(section.get("epsilons", (1e-3, 1e-2, 1e-1))),
        trials=args.trials if args.trials is not None else int(section.get("trials", 10)),
        kind=section.get("kind", "mixed"),
        probe_signals=int(section.get("probe_signals", 16)),
        seed=_mix_seed(seed, 5),
        bound_layer=section.get("bound_layer", "first_layer"),
    )
    if omega_doc is not None:
        omega = Omega(float(omega_doc["lo"]), float(omega_doc["hi"]),
                      int(omega_doc.get("grid_points", 2048)))
        estimates = estimate_lipschitz_bank(model.first_layer_filters(), omega)
    else:
        estimates = sweep.default_estimate(model, graph, sweep_cfg)
    records = run_sweep(model, graph, sweep_cfg, estimates, threads=args.threads)
    out = _out_dir(cfg, args.out_dir)
    summary = sweep.emit_report(records, out / "records.csv", dat=True)
    checkable = [r for r in records if r.bound > 0]
    summary["violations"] = len(bound_check(checkable, slack))
    summary["slack"] = slack
    (out / "records.summary.json").write_text(sweep._json_dumps(summary) + "\n")
    report.render_sweep_figure(records, out / "records.svg")
    return 0


def cmd_report(args) -> int:
    records = sweep.records_from_csv(args.records)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sweep.emit_report(records, out / "records.csv", dat=True)
    report.render_sweep_figure(records, out / "records.svg")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aggstab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-graph", help="write a random graph as JSON")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--blocks", type=int)
    p.add_argument("--p-in", dest="p_in", type=float)
    p.add_argument("--p-out", dest="p_out", type=float)
    p.add_argument("--normalization", default="none",
                   choices=["none", "symmetric_degree"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_graph)

    p = sub.add_parser("ingest", help="build a similarity graph and rating task")
    p.add_argument("--ratings", required=True)
    p.add_argument("--movies", help="comma-separated item ids")
    p.add_argument("--top-movies", dest="top_movies", type=int, default=32)
    p.add_argument("--target", type=int)
    p.add_argument("--min-common", dest="min_common", type=int, default=2)
    p.add_argument("--top-k", dest="top_k", type=int, default=40)
    p.add_argument("--negative-policy", dest="negative_policy", default="zero",
                   choices=["zero", "absolute"])
    p.add_argument("--min-ratings-per-user", dest="min_ratings_per_user", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", dest="out_dir", default=".")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a model from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("certify", help="estimate filter constants and check targets")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--omega-lo", dest="omega_lo", type=float, required=True)
    p.add_argument("--omega-hi", dest="omega_hi", type=float, required=True)
    p.add_argument("--grid-points", dest="grid_points", type=int, default=2048)
    p.add_argument("--l0-max", dest="l0_max", type=float, required=True)
    p.add_argument("--l1-max", dest="l1_max", type=float, required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--graph")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("sweep", help="run a perturbation sweep from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--trials", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="re-derive summary, plot data, and figure from a records CSV")
    p.add_argument("--records", required=True)
    p.add_argument("--out-dir", dest="out_dir", default=".")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OmegaCoverageError as exc:
        print(f"numeric domain error: {exc}", file=sys.stderr)
        return 4
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
