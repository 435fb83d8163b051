"""Pseudo-interaction augmentation of the user-item relation.

A user-item preference predictor is pretrained on the observed interactions
(split internally into train/validation), and each user's top-K unseen items
are unioned into their neighbor set.  The augmented sets feed the composer's
mediated pathway; whether they also enter the item-level propagation graph
is a trainer switch that defaults to off.

Two predictor kinds ship: plain matrix factorization ("mf_bpr") and a
propagation-smoothed variant ("lightgcn_ui") that reuses the graph module.
Both train with BPR triplets and keep the parameter snapshot with the best
internal-validation Recall@20.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .dataset import InteractionDataset, adjacency_lists
from .errors import ContractError, IngestionError
from .evaluation import recall_at_k
from .graph import build_graph, propagate
from .optim import AdamState, adam_step

PREDICTOR_KINDS = ("mf_bpr", "lightgcn_ui")
CANONICAL_K_GRID = (0, 5, 10, 20, 30, 40, 50)
SPLIT_STREAM = 101
INIT_STREAM = 211
EPOCH_STREAM = 307


@dataclass(frozen=True)
class UIPredictor:
    """A trained user-item scorer: score(u, i) = user row . item row.

    ``enabled`` is False when pretraining was impossible (no observed
    interactions); generation then degenerates to the observed sets.
    """

    kind: str
    user_factors: np.ndarray | None
    item_factors: np.ndarray | None
    report: dict = field(default_factory=dict)
    enabled: bool = True

    def score(self, u: int, i: int) -> float:
        return float(self.user_factors[u] @ self.item_factors[i])

    def user_scores(self, u: int) -> np.ndarray:
        return self.user_factors[u] @ self.item_factors.T

    def score_block(self, users: np.ndarray) -> np.ndarray:
        return self.user_factors[users] @ self.item_factors.T


@dataclass(frozen=True)
class AugmentedNeighbors:
    """Per-user item neighbor sets after the top-K union.

    ``user_items`` holds the sorted union of observed and generated items;
    ``user_generated`` holds the generated-only subsets, so provenance is
    recoverable per item.
    """

    num_users: int
    num_items: int
    k_aug: int
    user_items: tuple
    user_generated: tuple
    meta: dict = field(default_factory=dict)

    def pairs(self) -> np.ndarray:
        """All (user, item) edges of the augmented relation as an (E, 2) array."""
        chunks = [
            np.stack([np.full(items.shape[0], u, dtype=np.int64), items], axis=1)
            for u, items in enumerate(self.user_items)
            if items.shape[0] > 0
        ]
        if not chunks:
            return np.empty((0, 2), dtype=np.int64)
        return np.concatenate(chunks, axis=0)


@dataclass(frozen=True)
class PretrainConfig:
    kind: str = "mf_bpr"
    embedding_dim: int = 64
    layers: int = 2
    learning_rate: float = 1e-3
    l2: float = 1e-5
    epochs: int = 50
    batch_size: int = 4096
    eval_interval: int = 5
    valid_fraction: float = 0.1
    seed: int = 0


def _xavier(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((rows, cols)) * np.sqrt(2.0 / (rows + cols))


def internal_recall_at_k(
    user_factors: np.ndarray,
    item_factors: np.ndarray,
    train_lists,
    valid_lists,
    k: int = 20,
    chunk_size: int = 512,
) -> float:
    """Mean Recall@k over users holding internal-validation items.

    Train-split items are masked before ranking; ties break to the lower
    item id via a stable sort.
    """
    eval_users = [u for u in range(len(valid_lists)) if valid_lists[u].shape[0] > 0]
    if not eval_users:
        return float("nan")
    total = 0.0
    users = np.asarray(eval_users, dtype=np.int64)
    for start in range(0, users.shape[0], chunk_size):
        block = users[start : start + chunk_size]
        scores = user_factors[block] @ item_factors.T
        for row, u in enumerate(block):
            scores[row, train_lists[u]] = -np.inf
        order = np.argsort(-scores, axis=1, kind="stable")
        for row, u in enumerate(block):
            top = order[row, :k]
            top = top[np.isfinite(scores[row, top])]
            total += recall_at_k(top, valid_lists[u], k)
    return total / users.shape[0]


def _split_pairs(pairs: np.ndarray, valid_fraction: float, seed: int):
    """Uniform random pair split; validation may be empty for tiny inputs."""
    n = pairs.shape[0]
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, SPLIT_STREAM])))
    perm = rng.permutation(n)
    n_valid = min(int(round(valid_fraction * n)), n - 1)
    valid_idx = perm[:n_valid]
    train_idx = perm[n_valid:]
    return pairs[np.sort(train_idx)], pairs[np.sort(valid_idx)]


def _sample_negatives(users, num_items, train_sets, rng):
    neg = rng.integers(0, num_items, size=users.shape[0])
    for _ in range(1000):
        bad = np.asarray([n in train_sets[u] for u, n in zip(users, neg)])
        if not bad.any():
            return neg
        neg[bad] = rng.integers(0, num_items, size=int(bad.sum()))
    raise ContractError("negative sampling failed: a user interacts with every item")


def pretrain_predictor(
    ds: InteractionDataset, kind: str, config: PretrainConfig | None = None
) -> UIPredictor:
    """Train a user-item predictor with BPR and keep the best snapshot.

    The observed user-item pairs are split into predictor-train and
    predictor-validation; the snapshot maximizing internal Recall@20 is
    returned (the final epoch when the validation slice is empty).
    """
    config = config or PretrainConfig(kind=kind)
    if kind not in PREDICTOR_KINDS:
        raise ContractError(f"unknown predictor kind {kind!r}; expected one of {PREDICTOR_KINDS}")
    if not (0.0 < config.valid_fraction < 1.0):
        raise ContractError(f"valid fraction must be in (0, 1), got {config.valid_fraction}")
    if ds.ui_pairs.shape[0] == 0:
        return UIPredictor(
            kind=kind,
            user_factors=None,
            item_factors=None,
            enabled=False,
            report={"disabled": True, "reason": "no observed user-item interactions"},
        )

    M, N, d = ds.num_users, ds.num_items, config.embedding_dim
    train_pairs, valid_pairs = _split_pairs(ds.ui_pairs, config.valid_fraction, config.seed)
    train_lists = adjacency_lists(train_pairs, M, key=0)
    valid_lists = adjacency_lists(valid_pairs, M, key=0)
    train_sets = [set(l.tolist()) for l in train_lists]

    graph = None
    if kind == "lightgcn_ui":
        graph = build_graph(train_pairs, M, N)

    def factors(tables):
        if graph is None:
            return tables["users"], tables["items"]
        res = propagate(graph, tables["users"], tables["items"], config.layers)
        return res.left_fused, res.right_fused

    rng_init = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([config.seed, INIT_STREAM]))
    )
    tables = {"users": _xavier(M, d, rng_init), "items": _xavier(N, d, rng_init)}
    state = AdamState.init(tables)

    users_all = train_pairs[:, 0]
    items_all = train_pairs[:, 1]
    best_tables = {k: v.copy() for k, v in tables.items()}
    best_metric = -np.inf
    best_epoch = -1
    trace = []
    has_validation = valid_pairs.shape[0] > 0

    for epoch in range(config.epochs):
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([config.seed, EPOCH_STREAM, epoch]))
        )
        order = rng.permutation(users_all.shape[0])
        negatives = _sample_negatives(users_all, N, train_sets, rng)
        for start in range(0, order.shape[0], config.batch_size):
            idx = order[start : start + config.batch_size]
            u, i_pos, i_neg = users_all[idx], items_all[idx], negatives[idx]
            uf, vf = factors(tables)
            margins = np.einsum("ij,ij->i", uf[u], vf[i_pos] - vf[i_neg])
            coeff = -expit(-margins) / idx.shape[0]
            g_users = np.zeros_like(uf)
            g_items = np.zeros_like(vf)
            np.add.at(g_users, u, coeff[:, None] * (vf[i_pos] - vf[i_neg]))
            np.add.at(g_items, i_pos, coeff[:, None] * uf[u])
            np.add.at(g_items, i_neg, -coeff[:, None] * uf[u])
            if graph is not None:
                back = propagate(graph, g_users, g_items, config.layers)
                g_users, g_items = back.left_fused, back.right_fused
            g_users += 2.0 * config.l2 * tables["users"]
            g_items += 2.0 * config.l2 * tables["items"]
            tables, state = adam_step(
                tables, {"users": g_users, "items": g_items}, state, config.learning_rate
            )
        is_last = epoch == config.epochs - 1
        if has_validation and ((epoch + 1) % config.eval_interval == 0 or is_last):
            uf, vf = factors(tables)
            metric = internal_recall_at_k(uf, vf, train_lists, valid_lists)
            trace.append((epoch, metric))
            if metric > best_metric:
                best_metric = metric
                best_epoch = epoch
                best_tables = {k: v.copy() for k, v in tables.items()}

    if not has_validation or best_epoch < 0:
        best_tables = tables
        best_epoch = config.epochs - 1
    uf, vf = factors(best_tables)
    report = {
        "kind": kind,
        "seed": config.seed,
        "embedding_dim": d,
        "valid_fraction": config.valid_fraction,
        "train_pairs": int(train_pairs.shape[0]),
        "valid_pairs": int(valid_pairs.shape[0]),
        "selection_metric": "recall@20",
        "best_epoch": best_epoch,
        "best_recall20": float(best_metric) if np.isfinite(best_metric) else None,
        "trace": [(int(e), float(m)) for e, m in trace],
    }
    return UIPredictor(kind=kind, user_factors=uf, item_factors=vf, report=report)


def generate_topk(pred: UIPredictor, ds: InteractionDataset, k_aug: int) -> AugmentedNeighbors:
    """Union each user's observed items with their top-k_aug unseen items.

    Observed items are excluded from the generated lists, so the budget is
    spent entirely on new edges; score ties break to the lower item id.
    """
    if k_aug < 0:
        raise ContractError(f"k_aug must be >= 0, got {k_aug}")
    if k_aug not in CANONICAL_K_GRID:
        warnings.warn(f"k_aug={k_aug} is outside the canonical grid {CANONICAL_K_GRID}")
    observed = adjacency_lists(ds.ui_pairs, ds.num_users, key=0)
    meta = {"k_aug": k_aug, "predictor": pred.kind if pred is not None else None}
    if pred is not None and pred.report:
        meta["predictor_report"] = {
            k: pred.report.get(k) for k in ("seed", "best_recall20", "best_epoch") if k in pred.report
        }
    empty = np.empty(0, dtype=np.int64)
    if k_aug == 0 or pred is None or not pred.enabled:
        if pred is not None and not pred.enabled:
            meta["augmentation_disabled"] = True
        return AugmentedNeighbors(
            num_users=ds.num_users,
            num_items=ds.num_items,
            k_aug=k_aug,
            user_items=tuple(obs.copy() for obs in observed),
            user_generated=tuple(empty for _ in range(ds.num_users)),
            meta=meta,
        )

    unions = []
    generated = []
    chunk = 512
    for start in range(0, ds.num_users, chunk):
        users = np.arange(start, min(start + chunk, ds.num_users), dtype=np.int64)
        scores = pred.score_block(users).astype(np.float64)
        for row, u in enumerate(users):
            obs = observed[u]
            row_scores = scores[row]
            row_scores[obs] = -np.inf
            order = np.argsort(-row_scores, kind="stable")
            top = order[:k_aug]
            top = top[np.isfinite(row_scores[top])]
            gen = np.sort(top).astype(np.int64)
            generated.append(gen)
            unions.append(np.union1d(obs, gen))
    return AugmentedNeighbors(
        num_users=ds.num_users,
        num_items=ds.num_items,
        k_aug=k_aug,
        user_items=tuple(unions),
        user_generated=tuple(generated),
        meta=meta,
    )


def write_augmented(aug: AugmentedNeighbors, path: str) -> None:
    """Write "u<TAB>i<TAB>flag" lines, flag O for observed and G for generated."""
    header = dict(aug.meta)
    header.update({"num_users": aug.num_users, "num_items": aug.num_items, "k_aug": aug.k_aug})
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# augmented user-item neighbors\n")
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        for u in range(aug.num_users):
            gen = set(aug.user_generated[u].tolist())
            for i in aug.user_items[u]:
                flag = "G" if int(i) in gen else "O"
                fh.write(f"{u}\t{i}\t{flag}\n")


def read_augmented(path: str) -> AugmentedNeighbors:
    """Inverse of write_augmented; counts and provenance come from the file."""
    header = {}
    pairs_obs = []
    pairs_gen = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("{"):
                    header = json.loads(body)
                continue
            parts = line.split()
            if len(parts) != 3 or parts[2] not in ("O", "G"):
                raise IngestionError(f"{path}:{lineno}: expected 'u<TAB>i<TAB>O|G', got {line!r}")
            u, i = int(parts[0]), int(parts[1])
            (pairs_gen if parts[2] == "G" else pairs_obs).append((u, i))
    if "num_users" not in header or "num_items" not in header:
        raise IngestionError(f"{path}: missing header with num_users/num_items")
    num_users = int(header["num_users"])
    num_items = int(header["num_items"])
    obs_arr = np.asarray(pairs_obs, dtype=np.int64).reshape(-1, 2)
    gen_arr = np.asarray(pairs_gen, dtype=np.int64).reshape(-1, 2)
    gen_lists = adjacency_lists(gen_arr, num_users, key=0)
    all_arr = np.concatenate([obs_arr, gen_arr], axis=0)
    union_lists = adjacency_lists(all_arr, num_users, key=0)
    meta = {k: v for k, v in header.items() if k not in ("num_users", "num_items")}
    return AugmentedNeighbors(
        num_users=num_users,
        num_items=num_items,
        k_aug=int(header.get("k_aug", 0)),
        user_items=union_lists,
        user_generated=gen_lists,
        meta=meta,
    )


def observed_neighbors(ds: InteractionDataset) -> AugmentedNeighbors:
    """The degenerate (k_aug = 0) augmentation: observed sets only."""
    observed = adjacency_lists(ds.ui_pairs, ds.num_users, key=0)
    empty = np.empty(0, dtype=np.int64)
    return AugmentedNeighbors(
        num_users=ds.num_users,
        num_items=ds.num_items,
        k_aug=0,
        user_items=observed,
        user_generated=tuple(empty for _ in range(ds.num_users)),
        meta={"k_aug": 0, "predictor": None},
    )


PREDICTOR_MAGIC = b"EBP1"


def save_predictor(pred: UIPredictor, path: str) -> None:
    """Byte-deterministic little-endian dump of a trained predictor."""
    if not pred.enabled:
        raise ContractError("cannot save a disabled predictor")
    header = json.dumps(
        {
            "kind": pred.kind,
            "num_users": int(pred.user_factors.shape[0]),
            "num_items": int(pred.item_factors.shape[0]),
            "dim": int(pred.user_factors.shape[1]),
            "report": pred.report,
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(PREDICTOR_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(pred.user_factors, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(pred.item_factors, dtype="<f8").tobytes())


def load_predictor(path: str) -> UIPredictor:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 or blob[:4] != PREDICTOR_MAGIC:
        raise IngestionError(f"{path}: not a predictor checkpoint (bad magic)")
    (header_len,) = struct.unpack("<I", blob[4:8])
    header = json.loads(blob[8 : 8 + header_len].decode("utf-8"))
    m, n, d = header["num_users"], header["num_items"], header["dim"]
    offset = 8 + header_len
    expected = offset + (m + n) * d * 8
    if len(blob) != expected:
        raise IngestionError(f"{path}: payload is {len(blob)} bytes, header implies {expected}")
    users = np.frombuffer(blob, dtype="<f8", count=m * d, offset=offset).reshape(m, d).copy()
    offset += m * d * 8
    items = np.frombuffer(blob, dtype="<f8", count=n * d, offset=offset).reshape(n, d).copy()
    return UIPredictor(
        kind=header["kind"],
        user_factors=users,
        item_factors=items,
        report=header["report"],
    )
