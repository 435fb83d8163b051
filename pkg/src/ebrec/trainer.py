"""Training loop: epoch-level edge dropout, triplet batching, Adam updates,
periodic validation, best-snapshot selection, and checkpointing.

Edge dropout is resampled once per epoch and shared by all of the epoch's
batches; negatives are resampled once per epoch, one uniform non-interacted
bundle per positive.  Validation ranks the full bundle set with NDCG@20 as
the selection metric and never touches the test split.

Ablation wiring is first-class: "ebrec-e" disables the mediated composition
pathway and any augmentation (backbone-equivalent two-tower model),
"ebrec-c" keeps the mediated pathway but restricts it to observed edges.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .augmentor import CANONICAL_K_GRID, AugmentedNeighbors, observed_neighbors
from .composer import ComposerInputs
from .dataset import InteractionDataset, neighbor_sets
from .errors import ContractError, NumericalError
from .evaluation import rank_all
from .graph import build_graph, edge_dropout
from .model import ParameterSet, forward, init_parameters, save_checkpoint
from .objective import (
    ForwardContext,
    Gradients,
    LossBreakdown,
    LossWeights,
    loss_and_gradients,
    make_batch,
)
from .optim import AdamState, adam_step

LAMBDA1_GRID = (0.01, 0.04, 0.1, 0.5, 1.0)
LAMBDA2_GRID = (1e-5, 2e-5, 4e-5, 1e-4, 1e-3)
TAU_GRID = (0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5)
ABLATIONS = ("full", "ebrec-c", "ebrec-e")

NEG_STREAM = 0
SHUFFLE_STREAM = 1
DROP_UB_STREAM = 2
DROP_UI_STREAM = 3


@dataclass(frozen=True)
class TrainConfig:
    embedding_dim: int = 64
    layers: int = 2
    lambda1: float = 0.04
    lambda2: float = 1e-4
    tau: float = 0.25
    k_aug: int = 0
    dropout_rate: float = 0.2
    batch_size: int = 2048
    epochs: int = 100
    learning_rate: float = 1e-3
    eval_interval: int = 5
    patience: int = 20
    seed: int = 0
    ablation: str = "full"
    shared_user_embedding: bool = False
    augment_propagation_graph: bool = False
    contrast_pool: str = "batch"
    precision: str = "f64"

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ContractError(f"unknown ablation {self.ablation!r}; expected one of {ABLATIONS}")
        if self.precision not in ("f64", "f32"):
            raise ContractError(f"precision must be 'f64' or 'f32', got {self.precision!r}")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ContractError(f"dropout rate must be in [0, 1), got {self.dropout_rate}")
        for value, grid, name in (
            (self.lambda1, LAMBDA1_GRID, "lambda1"),
            (self.lambda2, LAMBDA2_GRID, "lambda2"),
            (self.tau, TAU_GRID, "tau"),
        ):
            if not any(abs(value - g) <= 1e-12 for g in grid):
                warnings.warn(f"{name}={value} is outside the declared grid {grid}")
        if self.k_aug not in CANONICAL_K_GRID:
            warnings.warn(f"k_aug={self.k_aug} is outside the declared grid {CANONICAL_K_GRID}")


@dataclass
class TrainReport:
    """Everything the run produced besides the parameter snapshot."""

    config: dict
    epoch_losses: list = field(default_factory=list)
    val_trace: list = field(default_factory=list)
    best_epoch: int = -1
    best_ndcg: float = float("nan")
    epoch_seconds: list = field(default_factory=list)
    dropout_edges: list = field(default_factory=list)
    stopped_early: bool = False
    augmentation: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["epoch_losses"] = [
            {k: v for k, v in asdict(l).items() if k != "diagnostics"} for l in self.epoch_losses
        ]
        out["optimizer"] = {"kind": "adam", "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8}
        out["reductions"] = {"bpr": "mean", "contrastive": "mean-over-anchors"}
        return out

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def adaptive_update(
    params: ParameterSet, grads: Gradients, state: AdamState, lr: float
) -> tuple[ParameterSet, AdamState]:
    """Bias-corrected adaptive-moment step over every parameter table."""
    arrays = dict(params.tables())
    grad_map = dict(grads.tables())
    if set(arrays) != set(grad_map):
        raise ContractError("gradient tables do not match parameter tables")
    new_arrays, new_state = adam_step(arrays, grad_map, state, lr)
    return (
        ParameterSet(
            user_bundle_level=new_arrays["user_bundle_level"],
            bundle_bundle_level=new_arrays["bundle_bundle_level"],
            item_item_level=new_arrays["item_item_level"],
            user_item_level=new_arrays.get("user_item_level"),
        ),
        new_state,
    )


def _epoch_seed(seed: int, epoch: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, stream]).generate_state(1)[0])


def _sample_negatives(users, train_keys, num_bundles, rng):
    """One uniform negative per positive, rejecting the user's train bundles."""
    neg = rng.integers(0, num_bundles, size=users.shape[0])
    for _ in range(1000):
        keys = users * num_bundles + neg
        idx = np.searchsorted(train_keys, keys)
        idx = np.minimum(idx, train_keys.shape[0] - 1)
        bad = train_keys[idx] == keys
        if not bad.any():
            return neg
        neg[bad] = rng.integers(0, num_bundles, size=int(bad.sum()))
    raise ContractError("negative sampling failed: a user interacts with every bundle")


def _mean_losses(losses: list) -> LossBreakdown:
    return LossBreakdown(
        bpr=float(np.mean([l.bpr for l in losses])),
        contrast_u=float(np.mean([l.contrast_u for l in losses])),
        contrast_b=float(np.mean([l.contrast_b for l in losses])),
        l2=float(np.mean([l.l2 for l in losses])),
        total=float(np.mean([l.total for l in losses])),
    )


def train(
    ds: InteractionDataset,
    aug: AugmentedNeighbors | None,
    cfg: TrainConfig,
    checkpoint_path: str | None = None,
    metadata_path: str | None = None,
) -> tuple[ParameterSet, TrainReport]:
    """Optimize the joint objective and return the best validation snapshot.

    Deterministic given cfg.seed.  With epochs=0 the initialized parameters
    and an empty trace are returned.  Non-finite losses abort with the epoch
    identified.
    """
    if ds.ub_train.shape[0] == 0 and cfg.epochs > 0:
        raise ContractError("cannot train without user-bundle training pairs")
    dtype = np.float64 if cfg.precision == "f64" else np.float32
    use_mediated = cfg.ablation != "ebrec-e"
    if cfg.ablation != "full" or aug is None:
        aug_eff = observed_neighbors(ds)
    else:
        aug_eff = aug
    if aug_eff.num_users != ds.num_users or aug_eff.num_items != ds.num_items:
        raise ContractError("augmentation entity counts do not match the dataset")

    nbrs = neighbor_sets(ds)
    inputs = ComposerInputs.build(
        bundle_items=nbrs.bundle_items,
        bundle_users=nbrs.bundle_users,
        user_items=aug_eff.user_items,
        num_users=ds.num_users,
        num_items=ds.num_items,
        dtype=dtype,
    )
    if cfg.augment_propagation_graph and cfg.ablation == "full":
        ui_pairs = aug_eff.pairs()
    else:
        ui_pairs = ds.ui_pairs
    ub_full = build_graph(ds.ub_train, ds.num_users, ds.num_bundles, dtype=dtype)
    ui_full = build_graph(ui_pairs, ds.num_users, ds.num_items, dtype=dtype)

    params = init_parameters(
        ds.num_users,
        ds.num_items,
        ds.num_bundles,
        cfg.embedding_dim,
        cfg.seed,
        shared_user_embedding=cfg.shared_user_embedding,
        dtype=dtype,
    )
    state = AdamState.init(dict(params.tables()))
    weights = LossWeights(lambda1=cfg.lambda1, lambda2=cfg.lambda2, tau=cfg.tau)

    users_all = ds.ub_train[:, 0]
    pos_all = ds.ub_train[:, 1]
    train_keys = np.sort(users_all * ds.num_bundles + pos_all)

    report = TrainReport(config=asdict(cfg), augmentation=dict(aug_eff.meta))
    best_params = params
    best_metric = -np.inf
    best_epoch = -1
    stale_evals = 0

    for epoch in range(cfg.epochs):
        tic = time.perf_counter()
        ub_g = edge_dropout(ub_full, cfg.dropout_rate, _epoch_seed(cfg.seed, epoch, DROP_UB_STREAM))
        ui_g = edge_dropout(ui_full, cfg.dropout_rate, _epoch_seed(cfg.seed, epoch, DROP_UI_STREAM))
        ctx = ForwardContext(
            ub_graph=ub_g,
            ui_graph=ui_g,
            composer_inputs=inputs,
            layers=cfg.layers,
            use_mediated=use_mediated,
            contrast_pool=cfg.contrast_pool,
        )
        neg_rng = np.random.Generator(
            np.random.PCG64(_epoch_seed(cfg.seed, epoch, NEG_STREAM))
        )
        negatives = _sample_negatives(users_all, train_keys, ds.num_bundles, neg_rng)
        shuffle_rng = np.random.Generator(
            np.random.PCG64(_epoch_seed(cfg.seed, epoch, SHUFFLE_STREAM))
        )
        order = shuffle_rng.permutation(users_all.shape[0])

        batch_losses = []
        for start in range(0, order.shape[0], cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = make_batch(users_all[idx], pos_all[idx], negatives[idx])
            try:
                breakdown, grads = loss_and_gradients(params, batch, weights, ctx)
                params, state = adaptive_update(params, grads, state, cfg.learning_rate)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch}: {exc}") from exc
            batch_losses.append(breakdown)
        report.epoch_losses.append(_mean_losses(batch_losses))
        report.dropout_edges.append((int(ub_g.num_edges), int(ui_g.num_edges)))
        report.epoch_seconds.append(time.perf_counter() - tic)

        is_last = epoch == cfg.epochs - 1
        if (epoch + 1) % cfg.eval_interval == 0 or is_last:
            view = forward(params, ub_full, ui_full, inputs, cfg.layers, use_mediated)
            result = rank_all(view, ds, split="valid", cutoffs=(20,))
            metric = result.metrics[("ndcg", 20)]
            report.val_trace.append((epoch, float(metric)))
            if metric > best_metric:
                best_metric = metric
                best_epoch = epoch
                best_params = params.copy()
                stale_evals = 0
            else:
                stale_evals += 1
            if stale_evals >= cfg.patience:
                report.stopped_early = True
                break

    if best_epoch < 0:
        best_params = params
    report.best_epoch = best_epoch
    report.best_ndcg = float(best_metric) if np.isfinite(best_metric) else float("nan")
    if checkpoint_path is not None:
        save_checkpoint(best_params, checkpoint_path, use_mediated=use_mediated)
    if metadata_path is not None:
        report.write(metadata_path)
    return best_params, report
