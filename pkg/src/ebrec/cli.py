"""Batch command-line interface.

Subcommands: pretrain, augment, train, eval, overlap-report, grid.  Every
run takes a structured config file (YAML or JSON) whose keys can be
overridden with flags; the fully materialized effective config is echoed to
the output directory so any run is reproducible from its artifacts.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

Heavy imports happen after argument parsing so that --threads can cap the
BLAS thread pools via environment variables.
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import sys

from .errors import ContractError, IngestionError, NumericalError

DEFAULTS = {
    # data and outputs
    "dataset": None,
    "output_dir": "run_output",
    "augmented_file": None,
    "predictor_checkpoint": None,
    "checkpoint": None,
    # training
    "embedding_dim": 64,
    "layers": 2,
    "lambda1": 0.04,
    "lambda2": 1e-4,
    "tau": 0.25,
    "k_aug": 0,
    "dropout_rate": 0.2,
    "batch_size": 2048,
    "epochs": 100,
    "learning_rate": 1e-3,
    "eval_interval": 5,
    "patience": 20,
    "seed": 0,
    "ablation": "full",
    "shared_user_embedding": False,
    "augment_propagation_graph": False,
    "contrast_pool": "batch",
    "precision": "f64",
    # predictor pretraining
    "predictor": "mf_bpr",
    "predictor_embedding_dim": 64,
    "predictor_layers": 2,
    "predictor_learning_rate": 1e-3,
    "predictor_l2": 1e-5,
    "predictor_epochs": 50,
    "predictor_batch_size": 4096,
    "predictor_eval_interval": 5,
    "predictor_valid_fraction": 0.1,
    "predictor_seed": 0,
    # evaluation
    "split": "test",
    "cutoffs": [20, 40],
    "curve": False,
    "mask_valid_at_test": True,
    "per_user": False,
    # grid sweeps: mapping of config key -> list of values
    "grid": None,
    "threads": None,
}

TRAIN_KEYS = (
    "embedding_dim",
    "layers",
    "lambda1",
    "lambda2",
    "tau",
    "k_aug",
    "dropout_rate",
    "batch_size",
    "epochs",
    "learning_rate",
    "eval_interval",
    "patience",
    "seed",
    "ablation",
    "shared_user_embedding",
    "augment_propagation_graph",
    "contrast_pool",
    "precision",
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_config_file(path: str) -> dict:
    import yaml

    if not os.path.isfile(path):
        raise UsageError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        loaded = yaml.safe_load(fh) or {}
    if not isinstance(loaded, dict):
        raise UsageError(f"config file {path} must hold a mapping")
    return loaded


def _parse_value(text: str):
    import yaml

    return yaml.safe_load(text)


def resolve_config(args) -> dict:
    """Materialize defaults, config file contents, and flag overrides."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        loaded = _load_config_file(args.config)
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key in DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    for pair in getattr(args, "set", None) or []:
        if "=" not in pair:
            raise UsageError(f"--set expects key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        if key not in DEFAULTS:
            raise UsageError(f"unknown config key {key!r}")
        cfg[key] = _parse_value(value)
    return cfg


def _echo_config(cfg: dict, outdir: str, name: str = "effective_config.json") -> None:
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, name), "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require_dataset(cfg: dict):
    from .dataset import load_dataset

    if not cfg["dataset"]:
        raise UsageError("no dataset directory given (config key 'dataset' or --dataset)")
    return load_dataset(cfg["dataset"])


def _train_config(cfg: dict):
    from .trainer import TrainConfig

    return TrainConfig(**{k: cfg[k] for k in TRAIN_KEYS})


def _pretrain_config(cfg: dict):
    from .augmentor import PretrainConfig

    return PretrainConfig(
        kind=cfg["predictor"],
        embedding_dim=cfg["predictor_embedding_dim"],
        layers=cfg["predictor_layers"],
        learning_rate=cfg["predictor_learning_rate"],
        l2=cfg["predictor_l2"],
        epochs=cfg["predictor_epochs"],
        batch_size=cfg["predictor_batch_size"],
        eval_interval=cfg["predictor_eval_interval"],
        valid_fraction=cfg["predictor_valid_fraction"],
        seed=cfg["predictor_seed"],
    )


def cmd_pretrain(cfg: dict) -> int:
    from .augmentor import pretrain_predictor, save_predictor

    ds = _require_dataset(cfg)
    outdir = cfg["output_dir"]
    _echo_config(cfg, outdir)
    pred = pretrain_predictor(ds, cfg["predictor"], _pretrain_config(cfg))
    report_path = os.path.join(outdir, "pretrain_report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(pred.report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if not pred.enabled:
        print("augmentation disabled: no observed user-item interactions "
              f"(report: {report_path})")
        return 0
    ckpt = os.path.join(outdir, "predictor.ebp")
    save_predictor(pred, ckpt)
    print(f"predictor={cfg['predictor']} internal_recall20={pred.report['best_recall20']}"
          f" checkpoint={ckpt}")
    return 0


def cmd_augment(cfg: dict) -> int:
    from .augmentor import generate_topk, load_predictor, observed_neighbors, write_augmented

    ds = _require_dataset(cfg)
    outdir = cfg["output_dir"]
    _echo_config(cfg, outdir)
    k = int(cfg["k_aug"])
    if k == 0:
        aug = observed_neighbors(ds)
    else:
        if not cfg["predictor_checkpoint"]:
            raise UsageError("k_aug > 0 needs a predictor checkpoint (--predictor-checkpoint)")
        pred = load_predictor(cfg["predictor_checkpoint"])
        aug = generate_topk(pred, ds, k)
    path = os.path.join(outdir, "augmented_user_item.txt")
    write_augmented(aug, path)
    generated = sum(g.shape[0] for g in aug.user_generated)
    print(f"k_aug={k} generated_edges={generated} file={path}")
    return 0


def cmd_train(cfg: dict) -> int:
    from .augmentor import read_augmented
    from .trainer import train

    ds = _require_dataset(cfg)
    outdir = cfg["output_dir"]
    _echo_config(cfg, outdir)
    aug = None
    if cfg["augmented_file"]:
        aug = read_augmented(cfg["augmented_file"])
    tcfg = _train_config(cfg)
    ckpt = os.path.join(outdir, "checkpoint.ebr")
    meta = os.path.join(outdir, "run_report.json")
    _, report = train(ds, aug, tcfg, checkpoint_path=ckpt, metadata_path=meta)
    print(
        f"ablation={tcfg.ablation} best_epoch={report.best_epoch} "
        f"valid_ndcg20={report.best_ndcg:.6f} checkpoint={ckpt}"
    )
    return 0


def _composer_inputs_for_eval(cfg, ds):
    from .augmentor import observed_neighbors, read_augmented
    from .composer import ComposerInputs
    from .dataset import neighbor_sets

    if cfg["augmented_file"]:
        aug = read_augmented(cfg["augmented_file"])
    else:
        aug = observed_neighbors(ds)
    nbrs = neighbor_sets(ds)
    inputs = ComposerInputs.build(
        bundle_items=nbrs.bundle_items,
        bundle_users=nbrs.bundle_users,
        user_items=aug.user_items,
        num_users=ds.num_users,
        num_items=ds.num_items,
    )
    return inputs, aug


def cmd_eval(cfg: dict) -> int:
    from .evaluation import CURVE_CUTOFFS, format_metrics, rank_all
    from .graph import build_graph
    from .model import forward, load_checkpoint

    ds = _require_dataset(cfg)
    outdir = cfg["output_dir"]
    _echo_config(cfg, outdir)
    if not cfg["checkpoint"]:
        raise UsageError("no checkpoint given (config key 'checkpoint' or --checkpoint)")
    params, meta = load_checkpoint(cfg["checkpoint"])
    if (meta["M"], meta["N"], meta["O"]) != (ds.num_users, ds.num_items, ds.num_bundles):
        raise ContractError(
            f"checkpoint entity counts (M={meta['M']}, N={meta['N']}, O={meta['O']}) do not "
            f"match dataset (M={ds.num_users}, N={ds.num_items}, O={ds.num_bundles})"
        )
    inputs, aug = _composer_inputs_for_eval(cfg, ds)
    ub = build_graph(ds.ub_train, ds.num_users, ds.num_bundles)
    if cfg["augment_propagation_graph"]:
        ui = build_graph(aug.pairs(), ds.num_users, ds.num_items)
    else:
        ui = build_graph(ds.ui_pairs, ds.num_users, ds.num_items)
    view = forward(params, ub, ui, inputs, cfg["layers"], use_mediated=meta["use_mediated"])
    cutoffs = CURVE_CUTOFFS if cfg["curve"] else tuple(cfg["cutoffs"])
    result = rank_all(
        view,
        ds,
        split=cfg["split"],
        cutoffs=cutoffs,
        mask_valid_at_test=cfg["mask_valid_at_test"],
        per_user=cfg["per_user"],
    )
    text = format_metrics(result, metrics=("ndcg",) if cfg["curve"] else ("recall", "ndcg"))
    suffix = "curve" if cfg["curve"] else cfg["split"]
    path = os.path.join(outdir, f"metrics_{suffix}.txt")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
        if cfg["per_user"]:
            for u in sorted(result.per_user):
                for (m, k), v in sorted(result.per_user[u].items()):
                    fh.write(f"user\t{u}\t{m}\t{k}\t{v:.6f}\n")
    sys.stdout.write(text)
    print(f"metrics written to {path}")
    return 0


def cmd_overlap_report(cfg: dict) -> int:
    import numpy as np

    from .dataset import neighbor_sets

    ds = _require_dataset(cfg)
    outdir = cfg["output_dir"]
    _echo_config(cfg, outdir)
    nbrs = neighbor_sets(ds)
    bins = [0] * 10
    no_items = 0
    for b in range(ds.num_bundles):
        items = nbrs.bundle_items[b]
        if items.shape[0] == 0:
            no_items += 1
            continue
        interacted = set()
        for u in nbrs.bundle_users[b]:
            interacted.update(nbrs.user_items[u].tolist())
        ratio = len(interacted.intersection(items.tolist())) / items.shape[0]
        bins[min(int(ratio * 10), 9)] += 1
    lines = ["bin\tcount"]
    for i, count in enumerate(bins):
        hi = "1.00" if i == 9 else f"{(i + 1) / 10:.2f}"
        lines.append(f"[{i / 10:.2f},{hi}{']' if i == 9 else ')'}\t{count}")
    lines.append(f"excluded_empty_bundles\t{no_items}")
    text = "\n".join(lines) + "\n"
    path = os.path.join(outdir, "overlap_report.txt")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    sys.stdout.write(text)
    return 0


def cmd_grid(cfg: dict) -> int:
    from .augmentor import generate_topk, load_predictor, observed_neighbors
    from .trainer import train

    ds = _require_dataset(cfg)
    outdir = cfg["output_dir"]
    _echo_config(cfg, outdir)
    grid = cfg.get("grid") or {}
    if not grid:
        raise UsageError("grid runs need a 'grid' mapping of config key -> value list")
    unknown = set(grid) - set(TRAIN_KEYS)
    if unknown:
        raise UsageError(f"grid keys must be train config keys; unknown: {sorted(unknown)}")
    keys = sorted(grid)
    predictor = None
    if any(k > 0 for k in grid.get("k_aug", [cfg["k_aug"]])):
        if not cfg["predictor_checkpoint"]:
            raise UsageError("grid over k_aug > 0 needs --predictor-checkpoint")
        predictor = load_predictor(cfg["predictor_checkpoint"])
    rows = []
    aug_cache = {}
    for combo in itertools.product(*(grid[k] for k in keys)):
        run_cfg = dict(cfg)
        run_cfg.update(dict(zip(keys, combo)))
        k = int(run_cfg["k_aug"])
        if k not in aug_cache:
            aug_cache[k] = (
                observed_neighbors(ds) if k == 0 or predictor is None
                else generate_topk(predictor, ds, k)
            )
        tcfg = _train_config(run_cfg)
        _, report = train(ds, aug_cache[k], tcfg)
        rows.append((dict(zip(keys, combo)), report.best_ndcg))
        print(f"grid {dict(zip(keys, combo))} valid_ndcg20={report.best_ndcg:.6f}")
    path = os.path.join(outdir, "grid_results.tsv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(keys) + "\tvalid_ndcg20\n")
        for combo, metric in rows:
            fh.write("\t".join(str(combo[k]) for k in keys) + f"\t{metric:.6f}\n")
    best = max(rows, key=lambda r: (r[1], tuple(sorted(r[0].items()))))
    print(f"best {best[0]} valid_ndcg20={best[1]:.6f} (full table: {path})")
    return 0


COMMANDS = {
    "pretrain": cmd_pretrain,
    "augment": cmd_augment,
    "train": cmd_train,
    "eval": cmd_eval,
    "overlap-report": cmd_overlap_report,
    "grid": cmd_grid,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ebrec", description="Bundle recommendation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, description=f"Run the {name} stage")
        p.add_argument("--config", help="YAML or JSON config file")
        p.add_argument("--dataset", help="dataset directory")
        p.add_argument("--output-dir", dest="output_dir", help="artifact directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--k-aug", dest="k_aug", type=int)
        p.add_argument("--ablation", choices=("full", "ebrec-c", "ebrec-e"))
        p.add_argument("--predictor", choices=("mf_bpr", "lightgcn_ui"))
        p.add_argument("--predictor-checkpoint", dest="predictor_checkpoint")
        p.add_argument("--augmented", dest="augmented_file")
        p.add_argument("--checkpoint")
        p.add_argument("--split", choices=("valid", "test"))
        p.add_argument("--curve", action="store_const", const=True, default=None)
        p.add_argument("--per-user", dest="per_user", action="store_const", const=True, default=None)
        p.add_argument("--threads", type=int)
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override any config key")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "threads", None):
            for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
                os.environ[var] = str(args.threads)
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except IngestionError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except ContractError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
