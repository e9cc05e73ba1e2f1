"""Command-line entry point: one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .autodiff import ContractError, DimensionError
from .config import RunConfig, parse_config, snapshot
from .encoder import ConfigError
from .expander import ExpanderConfig, bfs_diameter, build_expander
from .gradcheck import CHECK_SEED, elbo_gradcheck, fixture_graph
from .graph import (Graph, GraphFormatError, SamplingError, build_index, canonical_edges,
                    load_edge_list, load_features, save_edge_list, split_edges)
from .heuristics import heart_negatives, heuristic_scores, uniform_ranked_eval
from .metrics import Metrics, RankedEval, evaluate_ranked
from .rng import SeededRng
from .synthetic import generate_synthetic, truncated_reconstruction
from .training import (DivergenceError, Model, decoded_embeddings, deterministic_mode,
                       load_checkpoint, readout, save_checkpoint, score_pairs, train)

log = logging.getLogger("osbmlink")

COMMANDS = ("generate", "split", "train", "eval", "heuristic", "grad-check", "diag-expander",
            "reconstruct", "export-embeddings")
HIDDEN_PROTOCOL = "hidden-pairs"
CHECKPOINT_NAME = "model.ckpt"

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


class InputError(OSError):
    """A required input path is missing from the configuration or the disk."""


# ------------------------------------------------------------------- inputs


def _require(path: str, key: str) -> Path:
    if not path:
        raise InputError(f"config key {key!r} must name an input file")
    p = Path(path)
    if not p.exists():
        raise InputError(f"{key}: no such file {path!r}")
    return p


def _features(cfg: RunConfig, n: int):
    return load_features(_require(cfg.features, "features"), n) if cfg.features else None


class Task:
    """Training pairs plus the held-out evaluation for one run."""

    def __init__(self, num_nodes, train_edges, valid_edges, test_edges, all_edges,
                 hidden=None, hidden_labels=None, features=None):
        self.num_nodes = num_nodes
        self.train_edges = train_edges
        self.valid_edges = valid_edges
        self.test_edges = test_edges
        self.all_edges = all_edges
        self.hidden = hidden
        self.hidden_labels = hidden_labels
        self.features = features

    @property
    def exclude(self):
        return self.hidden


def load_task(cfg: RunConfig) -> Task:
    """Split directory, hidden-pair mask over a full graph, or an in-process random split."""
    if cfg.split_dir:
        d = Path(cfg.split_dir)
        parts = {}
        for name in ("train", "valid", "test"):
            parts[name] = load_edge_list(_require(str(d / f"{name}.txt"), "split_dir"))
        n = max(g.num_nodes for g in parts.values())
        all_edges = canonical_edges(np.concatenate([g.edges for g in parts.values()]))
        return Task(n, parts["train"].edges, parts["valid"].edges, parts["test"].edges, all_edges,
                    features=_features(cfg, n))
    graph = load_edge_list(_require(cfg.edges, "edges"))
    n = graph.num_nodes
    if cfg.hidden_pairs:
        hidden = load_edge_list(_require(cfg.hidden_pairs, "hidden_pairs"), num_nodes=n).edges
        keys = hidden[:, 0] * n + hidden[:, 1]
        edge_keys = graph.edges[:, 0] * n + graph.edges[:, 1]
        is_hidden = np.isin(edge_keys, keys)
        labels = np.isin(keys, edge_keys).astype(np.int64)
        empty = np.zeros((0, 2), dtype=np.int64)
        return Task(n, graph.edges[~is_hidden], empty, hidden[labels == 1], graph.edges,
                    hidden=hidden, hidden_labels=labels, features=_features(cfg, n))
    split = split_edges(graph, cfg.split_train, cfg.split_valid, cfg.split_test,
                        SeededRng(cfg.train.seed).child("split"))
    return Task(n, split.train, split.valid, split.test, graph.edges, features=_features(cfg, n))


def ranked_eval(cfg: RunConfig, task: Task) -> RankedEval:
    """Candidate lists for the held-out positives under the configured protocol."""
    if task.hidden is not None:
        negs = task.hidden[task.hidden_labels == 0]
        pos = task.hidden[task.hidden_labels == 1]
        if len(pos) == 0 or len(negs) == 0:
            raise ContractError("hidden pairs need at least one edge and one non-edge")
        return RankedEval(pos, [negs] * len(pos), protocol=HIDDEN_PROTOCOL)
    if len(task.test_edges) == 0:
        raise ContractError("test split is empty")
    index = build_index(task.all_edges, task.num_nodes)
    rng = SeededRng(cfg.train.seed).child("eval")
    if cfg.protocol == "heart-approx":
        return heart_negatives(index, task.test_edges, cfg.n_neg_eval, rng)
    return uniform_ranked_eval(index, task.test_edges, cfg.n_neg_eval, rng)


# ------------------------------------------------------------------ outputs


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_metrics(path: Path, metrics: Metrics, ranked: RankedEval) -> dict:
    body = metrics.to_json(len(ranked), ranked.n_neg_per_pos, ranked.protocol)
    path.write_text(json.dumps(body, indent=1) + "\n", encoding="utf-8")
    return body


def write_matrix(path: Path, matrix) -> None:
    m = np.atleast_2d(np.asarray(matrix))
    if m.dtype.kind in "iub":
        lines = [",".join(str(int(x)) for x in row) for row in m]
    else:
        lines = [",".join(repr(float(x)) for x in row) for row in m]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _summary(body: dict) -> str:
    keys = [k for k in ("auc", "mrr", "hits@10", "hits@100") if k in body]
    return " ".join(f"{k}={body[k]:.4f}" for k in keys) + f" protocol={body['protocol']}"


def model_metrics(model: Model, cfg: RunConfig, task: Task) -> tuple[Metrics, RankedEval]:
    ranked = ranked_eval(cfg, task)
    zt = decoded_embeddings(model, task.features)
    return evaluate_ranked(ranked, lambda pairs: score_pairs(model, pairs, embeddings=zt)), ranked


# ----------------------------------------------------------------- commands


def cmd_generate(cfg: RunConfig, args) -> int:
    out = _out_dir(args)
    inst = generate_synthetic(cfg.syn_nodes, cfg.syn_communities, SeededRng(cfg.train.seed),
                              mode=cfg.syn_mode, bias=cfg.syn_bias, sampling=cfg.syn_sampling,
                              hidden_frac=cfg.syn_hidden_frac)
    save_edge_list(Graph(inst.num_nodes, inst.edges), out / "edges.txt")
    save_edge_list(inst.hidden, out / "hidden.txt", num_nodes=inst.num_nodes)
    write_matrix(out / "memberships.csv", inst.memberships)
    print(f"nodes={inst.num_nodes} edges={len(inst.edges)} hidden={len(inst.hidden)} "
          f"hidden_edges={int(inst.hidden_labels().sum())}")
    return EXIT_OK


def cmd_split(cfg: RunConfig, args) -> int:
    out = _out_dir(args)
    graph = load_edge_list(_require(cfg.edges, "edges"))
    split = split_edges(graph, cfg.split_train, cfg.split_valid, cfg.split_test,
                        SeededRng(cfg.train.seed).child("split"))
    for name in ("train", "valid", "test"):
        save_edge_list(getattr(split, name), out / f"{name}.txt", num_nodes=graph.num_nodes)
    print(f"train={len(split.train)} valid={len(split.valid)} test={len(split.test)}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    out = _out_dir(args)
    task = load_task(cfg)
    start = time.perf_counter()
    model, history = train(task.num_nodes, task.train_edges, cfg.train, task.valid_edges,
                           task.features, exclude_pairs=task.exclude, known_edges=task.all_edges)
    seconds = time.perf_counter() - start
    history.write(out / "history.csv")
    save_checkpoint(model, out / CHECKPOINT_NAME)
    write_matrix(out / "embeddings.csv", decoded_embeddings(model, task.features))
    metrics, ranked = model_metrics(model, cfg, task)
    body = write_metrics(out / "metrics.json", metrics, ranked)
    print(f"{_summary(body)} epochs={cfg.train.epochs} train_seconds={seconds:.1f}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    out = _out_dir(args)
    model = load_checkpoint(_require(cfg.checkpoint, "checkpoint"))
    task = load_task(cfg)
    if task.num_nodes != model.num_nodes:
        raise DimensionError(f"checkpoint has {model.num_nodes} nodes, data has {task.num_nodes}")
    metrics, ranked = model_metrics(model, cfg, task)
    print(_summary(write_metrics(out / "metrics.json", metrics, ranked)))
    return EXIT_OK


def cmd_heuristic(cfg: RunConfig, args) -> int:
    out = _out_dir(args)
    task = load_task(cfg)
    observed = np.concatenate([task.train_edges, task.valid_edges])
    index = build_index(observed, task.num_nodes)
    ranked = ranked_eval(cfg, task)
    metrics = evaluate_ranked(ranked, lambda pairs: heuristic_scores(cfg.heuristic, index, pairs))
    body = write_metrics(out / "metrics.json", metrics, ranked)
    print(f"heuristic={cfg.heuristic} {_summary(body)}")
    return EXIT_OK


def cmd_grad_check(cfg: RunConfig, args) -> int:
    graph = load_edge_list(_require(cfg.edges, "edges")) if cfg.edges else fixture_graph()
    seed = args.seed if args.seed is not None else CHECK_SEED
    res = elbo_gradcheck(graph, seed=seed, step=cfg.grad_step)
    ok = res.passed(cfg.grad_threshold)
    worst = max(res.per_tensor, key=lambda k: res.per_tensor[k]["entry"])
    if args.out:
        body = {"max_rel_error": res.max_rel_error, "threshold": cfg.grad_threshold,
                "step": cfg.grad_step, "seed": seed, "num_values": res.num_values,
                "worst_tensor": worst, "passed": ok, "per_tensor": res.per_tensor}
        (_out_dir(args) / "gradcheck.json").write_text(json.dumps(body, indent=1) + "\n",
                                                       encoding="utf-8")
    print(f"max_rel_error={res.max_rel_error:.3e} threshold={cfg.grad_threshold:g} "
          f"worst={worst} values={res.num_values} seconds={res.seconds:.1f} "
          f"{'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NUMERIC


def expander_sweep(n: int, d_exp: int, seeds: int, root: SeededRng) -> dict:
    diameters, max_degree = [], 0
    for s in range(seeds):
        edges = build_expander(n, ExpanderConfig(d_exp, s), root.child(f"expander{s}"))
        deg = np.bincount(edges.ravel(), minlength=n)
        max_degree = max(max_degree, int(deg.max()))
        diameters.append(bfs_diameter(edges, n))
    connected = [d for d in diameters if d != "disconnected"]
    return {"nodes": n, "d_exp": d_exp, "seeds": seeds, "connected": len(connected),
            "diameter_le_20": sum(d <= 20 for d in connected),
            "max_diameter": max(connected) if connected else None,
            "max_degree": max_degree, "diameters": diameters}


def cmd_diag_expander(cfg: RunConfig, args) -> int:
    start = time.perf_counter()
    body = expander_sweep(cfg.exp_nodes, cfg.train.d_exp, cfg.exp_seeds, SeededRng(cfg.train.seed))
    body["seconds"] = time.perf_counter() - start
    if args.out:
        (_out_dir(args) / "expander.json").write_text(json.dumps(body, indent=1) + "\n",
                                                      encoding="utf-8")
    print(f"nodes={body['nodes']} d_exp={body['d_exp']} connected={body['connected']}/{body['seeds']} "
          f"diameter<=20={body['diameter_le_20']} max_diameter={body['max_diameter']} "
          f"max_degree={body['max_degree']}")
    return EXIT_OK


def cmd_reconstruct(cfg: RunConfig, args) -> int:
    out = _out_dir(args)
    model = load_checkpoint(_require(cfg.checkpoint, "checkpoint"))
    prob = truncated_reconstruction(model, cfg.dims, _features(cfg, model.num_nodes))
    write_matrix(out / "reconstruction.csv", prob)
    print(f"dims={cfg.dims} nodes={model.num_nodes} mean_probability={prob.mean():.4f}")
    return EXIT_OK


def cmd_export_embeddings(cfg: RunConfig, args) -> int:
    out = _out_dir(args)
    model = load_checkpoint(_require(cfg.checkpoint, "checkpoint"))
    features = _features(cfg, model.num_nodes)
    sample = readout(model, features)
    write_matrix(out / "embeddings.csv", decoded_embeddings(model, features))
    write_matrix(out / "memberships.csv", sample.b.data)
    write_matrix(out / "strengths.csv", sample.r.data)
    if sample.pi is not None:
        write_matrix(out / "pi.csv", np.asarray(sample.pi).reshape(1, -1))
    print(f"nodes={model.num_nodes} k={model.config.k}")
    return EXIT_OK


HANDLERS = {"generate": cmd_generate, "split": cmd_split, "train": cmd_train, "eval": cmd_eval,
            "heuristic": cmd_heuristic, "grad-check": cmd_grad_check,
            "diag-expander": cmd_diag_expander, "reconstruct": cmd_reconstruct,
            "export-embeddings": cmd_export_embeddings}
# commands that need no output directory
OPTIONAL_OUT = ("grad-check", "diag-expander")


# --------------------------------------------------------------------- main


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"usage: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="osbmlink", description="Sparse graph transformer with an overlapping-SBM "
                                             "variational posterior for link prediction.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", metavar="PATH", help="key = value file")
    p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], dest="overrides",
                   help="override one key (repeatable)")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--seed", type=int, help="root seed (sets key 'seed')")
    p.add_argument("--deterministic", action="store_true", help="single-threaded numerics")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args) -> RunConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.deterministic:
        overrides.append("deterministic=true")
    return parse_config(args.config, overrides)


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, ContractError, DimensionError, SamplingError)):
        return EXIT_USAGE
    if isinstance(exc, (OSError, GraphFormatError)):
        return EXIT_IO
    if isinstance(exc, (FloatingPointError, DivergenceError, ArithmeticError)):
        return EXIT_NUMERIC
    return EXIT_USAGE


def _one_line(exc: BaseException) -> str:
    text = " ".join(str(exc).split()) or exc.__class__.__name__
    return f"error: {exc.__class__.__name__}: {text}"


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.DEBUG)
        cfg = resolve_config(args)
        if args.out is None and args.command not in OPTIONAL_OUT:
            raise ConfigError(f"usage: {args.command} needs --out DIR")
        if args.out:
            _out_dir(args).joinpath("config.txt").write_text(snapshot(cfg), encoding="utf-8")
        with deterministic_mode(cfg.deterministic):
            return HANDLERS[args.command](cfg, args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:
        print(_one_line(exc), file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
