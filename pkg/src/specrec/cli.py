"""``specrec`` command line: train, eval, toy, simulate, diagnose, verify, rerun.

Every command writes its outputs plus a ``manifest.json`` into ``--out``.
``specrec rerun <manifest>`` replays the recorded arguments.

Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .balancer import BalancerConfig, normalize_rows
from .data import (
    build_normalized_adjacency,
    complement_adjacency,
    fingerprint,
    load_interactions,
    read_split_manifest,
    split,
    write_split_manifest,
)
from .dynamics import simulate_filter_dynamics, toy_trajectory
from .encoders import forward, load_checkpoint, save_checkpoint
from .errors import (
    ConfigError,
    DataError,
    DivergenceError,
    FingerprintMismatchError,
    InvalidInputError,
    SpecrecError,
)
from .evaluation import evaluate
from .seeding import rng_stream
from .spectrum import erank, load_matrix_csv, spectrum_report, verify_ssl_equivalence
from .synthetic import random_bipartite
from .trainer import TrainConfig, train

logger = logging.getLogger("specrec")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGENCE = 0, 1, 2, 3

SPEC_MODES = {"none": "none", "directspec": "directspec", "directspec+": "directspec_plus"}
TEMPERATURES = {"static": "static_graph", "dynamic": "dynamic_attention", "constant": "constant"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _ks(text):
    try:
        ks = [int(k) for k in text.split(",") if k.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad k list {text!r}") from None
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("k values must be positive integers")
    return ks


def _resolve_data(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    root = os.environ.get("SPECREC_DATA_DIR")
    if root and not p.is_absolute() and (Path(root) / p).exists():
        return Path(root) / p
    raise DataError(f"dataset not found: {path}" + (f" (also tried under {root})" if root else ""))


def _load_split_dataset(args):
    path = _resolve_data(args.data)
    ds = load_interactions(path, format=args.format)
    return split(ds, rng_stream(args.seed, "split"), args.train_fraction, args.val_fraction,
                 per_user=args.per_user_split), path


def _write_manifest(out: Path, command: str, args, artifacts, config=None, dataset_fp=None):
    args_dict = {k: v for k, v in vars(args).items() if k not in ("func", "command")}
    manifest = {
        "command": command,
        "args": args_dict,
        "config": config,
        "dataset_fingerprint": dataset_fp,
        "seed": getattr(args, "seed", None),
        "artifacts": {k: str(v) for k, v in artifacts.items()},
        "version": __version__,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    return path


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train_config(args) -> TrainConfig:
    mode = SPEC_MODES[args.spec]
    objective = args.objective or ("bpr" if mode == "none" else "align_log")
    tau1 = args.tau1
    tau0 = tau1 if args.tau0 is None else args.tau0
    balancer = BalancerConfig(
        mode=mode,
        alpha=args.alpha,
        power=args.power,
        temperature_source=TEMPERATURES[args.temperature],
        tau0=tau0,
        tau1=tau1,
        hops=args.layers,
        integration=args.integration,
    )
    return TrainConfig(
        encoder_kind=args.encoder,
        objective=objective,
        balancer=balancer,
        dim=args.dim,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        regularization=args.reg,
        epochs=args.epochs,
        negative_ratio=args.neg_ratio,
        gcn_layers=args.gcn_layers,
        seed=args.seed,
        erank_log_interval=args.erank_interval,
        eval_every=args.eval_every,
    )


def cmd_train(args) -> int:
    config = _train_config(args)
    ds, path = _load_split_dataset(args)
    fp = fingerprint(ds)
    out = _out_dir(args)
    result = train(config, ds)
    adj = build_normalized_adjacency(ds)
    ckpt_csv, ckpt_json = save_checkpoint(
        out / "checkpoint", result.params, dataset_fingerprint=fp, seed=args.seed,
        best_epoch=result.best_epoch,
        user_labels=[ds.user_label(u) for u in range(ds.num_users)],
        item_labels=[ds.item_label(i) for i in range(ds.num_items)],
    )
    result.history.write_csv(out / "history.csv")
    write_split_manifest(ds, out / "split.csv")
    artifacts = {"checkpoint": ckpt_csv, "checkpoint_meta": ckpt_json,
                 "history": out / "history.csv", "split": out / "split.csv"}
    H = forward(result.params, adj)
    print(f"erank {erank(H):.6f} (d = {config.dim})")
    if config.epochs > 0:
        report = evaluate(H, ds, ks=args.k)
        report.write_json(out / "metrics.json")
        report.write_csv(out / "metrics.csv")
        artifacts.update(metrics_json=out / "metrics.json", metrics_csv=out / "metrics.csv")
        for k in sorted(report.metrics):
            print(f"recall@{k} {report.recall(k):.6f}  ndcg@{k} {report.ndcg(k):.6f}")
        print(f"sim {report.sim:.6f}")
    config_dict = config.to_dict()
    config_dict["data"] = str(path)
    _write_manifest(out, "train", args, artifacts, config_dict, fp)
    return EXIT_OK


def _align_rows(params, meta, ds):
    """Reorder checkpoint rows to the dataset's indexing via the stored labels."""
    if "user_labels" not in meta:
        return params
    row_of_user = {label: k for k, label in enumerate(meta["user_labels"])}
    row_of_item = {label: k for k, label in enumerate(meta["item_labels"])}
    try:
        users = [row_of_user[ds.user_label(u)] for u in range(ds.num_users)]
        items = [row_of_item[ds.item_label(i)] + len(row_of_user) for i in range(ds.num_items)]
    except KeyError as exc:
        raise FingerprintMismatchError(f"label {exc} is not in the checkpoint") from None
    aligned = params.copy()
    aligned.base_embeddings = params.base_embeddings[users + items]
    return aligned


def cmd_eval(args) -> int:
    params, meta = load_checkpoint(args.checkpoint)
    if args.split_file:
        ds = read_split_manifest(args.split_file)
    elif args.data:
        if args.seed is None:
            args.seed = int(meta.get("seed", 42))
        ds, _ = _load_split_dataset(args)
    else:
        raise UsageError("eval needs --data or --split-file")
    fp = fingerprint(ds)
    expected = meta.get("dataset_fingerprint")
    if expected is not None and expected != fp:
        raise FingerprintMismatchError(
            f"checkpoint was trained on dataset {expected[:12]}..., this split is {fp[:12]}...; "
            "re-split with the training seed or pass the training split.csv via --split-file"
        )
    if params.base_embeddings.shape[0] != ds.num_nodes:
        raise DataError(f"checkpoint has {params.base_embeddings.shape[0]} rows, dataset {ds.num_nodes} nodes")
    params = _align_rows(params, meta, ds)
    adj = build_normalized_adjacency(ds)
    report = evaluate(forward(params, adj), ds, ks=args.k, split=args.split)
    out = _out_dir(args)
    report.write_json(out / "metrics.json")
    report.write_csv(out / "metrics.csv")
    for k in sorted(report.metrics):
        print(f"recall@{k} {report.recall(k):.6f}  ndcg@{k} {report.ndcg(k):.6f}")
    print(f"sim {report.sim:.6f}")
    _write_manifest(out, "eval", args, {"metrics_json": out / "metrics.json", "metrics_csv": out / "metrics.csv"},
                    dataset_fp=fp)
    return EXIT_OK


def cmd_toy(args) -> int:
    if args.iterations < 0 or args.size < 1:
        raise UsageError("need --iterations >= 0 and --size >= 1")
    eranks = toy_trajectory(args.seed, args.size, args.alpha, args.iterations, args.power)
    out = _out_dir(args)
    np.savetxt(out / "erank.csv", np.column_stack([np.arange(len(eranks)), eranks]),
               delimiter=",", header="iteration,erank", comments="", fmt=["%d", "%.17g"])
    for it, e in enumerate(eranks):
        print(f"{it},{e:.6f}")
    _write_manifest(out, "toy", args, {"erank": out / "erank.csv"})
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.data:
        ds = load_interactions(_resolve_data(args.data), format=args.format)
        pairs, nu, ni = ds.interactions, ds.num_users, ds.num_items
        fp = fingerprint(ds)
    else:
        nu, ni = args.users, args.items
        pairs = random_bipartite(nu, ni, args.density, rng_stream(args.seed, "graph"))
        fp = None
    adj_pos = build_normalized_adjacency(pairs, nu, ni)
    adj_neg = None
    if args.mode in ("high_pass", "band"):
        adj_neg = complement_adjacency(pairs, nu, ni)
    H0 = rng_stream(args.seed, "init").standard_normal((nu + ni, args.dim))
    res = simulate_filter_dynamics(adj_pos, adj_neg, args.alpha, args.steps, H0, args.mode)
    out = _out_dir(args)
    np.savetxt(out / "dynamics.csv",
               np.column_stack([np.arange(len(res.eranks)), res.eranks, res.numeric_ranks]),
               delimiter=",", header="step,erank,numeric_rank", comments="", fmt=["%d", "%.17g", "%d"])
    print(f"steps {args.steps} final erank {res.eranks[-1]:.6f} numeric rank {res.numeric_ranks[-1]}")
    _write_manifest(out, "simulate", args, {"dynamics": out / "dynamics.csv"}, dataset_fp=fp)
    return EXIT_OK


def cmd_diagnose(args) -> int:
    path = Path(args.matrix)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    H = load_matrix_csv(path)
    report = spectrum_report(H, args.eps)
    out = _out_dir(args)
    text = json.dumps(report.to_dict(), indent=2)
    (out / "spectrum.json").write_text(text)
    print(text)
    _write_manifest(out, "diagnose", args, {"spectrum": out / "spectrum.json"})
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.n < 1 or args.d < 1 or args.trials < 1:
        raise UsageError("--n, --d and --trials must be positive")
    if args.method in ("bt", "logdet") and args.n < args.d:
        raise UsageError(f"{args.method} needs n >= d")
    rng = rng_stream(args.seed, "verify")
    rows = []
    for t in range(args.trials):
        H = rng.standard_normal((args.n, args.d))
        if args.method == "scl":
            H = normalize_rows(H)
        else:
            H = H / np.linalg.norm(H, axis=0, keepdims=True)
        r = verify_ssl_equivalence(H, "barlow_twins" if args.method == "bt" else args.method)
        rows.append((t, r.pairwise_value, r.spectral_value, r.absolute_gap))
    out = _out_dir(args)
    np.savetxt(out / "verify.csv", np.array(rows), delimiter=",",
               header="trial,pairwise,spectral,gap", comments="", fmt=["%d", "%.17g", "%.17g", "%.17g"])
    gap = max(r[3] for r in rows)
    print(f"max gap {gap:.3e} over {args.trials} trials ({args.method}, n={args.n}, d={args.d})")
    _write_manifest(out, "verify", args, {"verify": out / "verify.csv"})
    return EXIT_OK


def cmd_rerun(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    command = manifest["command"]
    if command not in COMMANDS or command == "rerun":
        raise UsageError(f"manifest records an unknown command {command!r}")
    recorded = dict(manifest["args"])
    if args.out:
        recorded["out"] = args.out
    return COMMANDS[command](argparse.Namespace(command=command, **recorded))


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "toy": cmd_toy,
    "simulate": cmd_simulate,
    "diagnose": cmd_diagnose,
    "verify": cmd_verify,
    "rerun": cmd_rerun,
}


def _add_data_args(p, required):
    p.add_argument("--data", required=required, help="interaction file (falls back to $SPECREC_DATA_DIR/<path>)")
    p.add_argument("--format", choices=("pair_list", "citeulike_users"), default="pair_list")
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--per-user-split", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="specrec", description="Spectrum-balanced recommendation toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model and evaluate it on the test split")
    _add_data_args(p, required=True)
    p.add_argument("--encoder", choices=("mf", "lightgcn"), default="mf")
    p.add_argument("--spec", choices=tuple(SPEC_MODES), default="none")
    p.add_argument("--objective", choices=("bpr", "bce", "align_log", "align_euclidean"))
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--power", type=int, default=1, help="exponent K of the DirectSpec update")
    p.add_argument("--tau0", type=float, help="defaults to --tau1")
    p.add_argument("--tau1", type=float, default=1.0)
    p.add_argument("--temperature", choices=tuple(TEMPERATURES), default="static")
    p.add_argument("--layers", type=int, default=3, help="filter order L of the static temperature")
    p.add_argument("--gcn-layers", type=int, default=3, help="LightGCN propagation depth")
    p.add_argument("--integration", choices=("backprop", "inplace", "layer"))
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--reg", type=float, default=0.01)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--neg-ratio", type=int, default=1)
    p.add_argument("--erank-interval", type=int, default=100)
    p.add_argument("--eval-every", type=int, default=5)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--k", type=_ks, default=[10, 20])
    p.add_argument("--out", default="runs/train")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    _add_data_args(p, required=False)
    p.add_argument("--split-file", help="split.csv written by train")
    p.add_argument("--split", choices=("test", "val"), default="test")
    p.add_argument("--seed", type=int, help="split seed (defaults to the checkpoint's)")
    p.add_argument("--k", type=_ks, default=[10, 20])
    p.add_argument("--out", default="runs/eval")

    p = sub.add_parser("toy", help="erank of a random matrix under repeated balancing")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--iterations", type=int, default=50)
    p.add_argument("--size", type=int, default=10)
    p.add_argument("--power", type=int, default=1)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", default="runs/toy")

    p = sub.add_parser("simulate", help="linear filter dynamics on a bipartite graph")
    p.add_argument("--mode", choices=("low_pass", "high_pass", "band"), default="low_pass")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--data")
    p.add_argument("--format", choices=("pair_list", "citeulike_users"), default="pair_list")
    p.add_argument("--users", type=int, default=10)
    p.add_argument("--items", type=int, default=10)
    p.add_argument("--density", type=float, default=0.3)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", default="runs/simulate")

    p = sub.add_parser("diagnose", help="spectrum report of an embedding CSV")
    p.add_argument("matrix")
    p.add_argument("--eps", type=float, default=1e-10)
    p.add_argument("--out", default="runs/diagnose")

    p = sub.add_parser("verify", help="pairwise vs spectral forms of SSL losses")
    p.add_argument("--method", choices=("bt", "scl", "logdet"), default="scl")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", default="runs/verify")

    p = sub.add_parser("rerun", help="replay a manifest.json")
    p.add_argument("manifest")
    p.add_argument("--out", help="write to a different directory")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"specrec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, InvalidInputError) as exc:
        print(f"specrec: invalid arguments: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"specrec: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (DataError, FingerprintMismatchError, OSError) as exc:
        print(f"specrec: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SpecrecError as exc:
        print(f"specrec: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
