"""Full-ranking evaluation: Recall@K and NDCG@K over every bundle.

Each evaluated user's bundles are sorted by score descending with ties
broken by ascending bundle id; training positives are always masked, and
validation positives are additionally masked when scoring the test split.
Users with no relevant bundle in the evaluated split are excluded from the
aggregates, which are plain means over the remaining users.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import InteractionDataset, adjacency_lists
from .errors import ContractError
from .model import ViewEmbeddings, score_users

CURVE_CUTOFFS = tuple(range(5, 105, 5))


@dataclass(frozen=True)
class RankingResult:
    """Per-user top lists plus aggregate metrics.

    ``metrics`` maps (metric_name, cutoff) to the mean over evaluated
    users; ``per_user`` optionally holds the same keyed metrics per user.
    """

    split: str
    user_ids: np.ndarray
    rankings: tuple
    relevant: tuple
    metrics: dict
    per_user: dict | None = None


def recall_at_k(ranked, relevant, k: int) -> float:
    """Fraction of the relevant set present in the top k.

    Returns nan for an empty relevant set (such users are excluded from
    aggregation upstream).
    """
    if k < 1:
        raise ContractError(f"cutoff must be >= 1, got {k}")
    relevant = set(int(r) for r in relevant)
    if not relevant:
        return float("nan")
    hits = sum(1 for b in list(ranked)[:k] if int(b) in relevant)
    return hits / len(relevant)


def ndcg_at_k(ranked, relevant, k: int) -> float:
    """Binary-gain NDCG: discount 1/log2(pos+1), ideal DCG over |relevant|."""
    if k < 1:
        raise ContractError(f"cutoff must be >= 1, got {k}")
    relevant = set(int(r) for r in relevant)
    if not relevant:
        return float("nan")
    dcg = 0.0
    for pos, b in enumerate(list(ranked)[:k], start=1):
        if int(b) in relevant:
            dcg += 1.0 / np.log2(pos + 1)
    ideal = sum(1.0 / np.log2(pos + 1) for pos in range(1, min(k, len(relevant)) + 1))
    return dcg / ideal


def rank_all(
    view: ViewEmbeddings,
    ds: InteractionDataset,
    split: str = "valid",
    cutoffs=(20, 40),
    mask_valid_at_test: bool = True,
    per_user: bool = False,
    chunk_size: int = 1024,
) -> RankingResult:
    """Rank every bundle for every user with relevant bundles in the split.

    Scores come from the two views' inner products; masked bundles are
    dropped from the ranked lists entirely.
    """
    if not cutoffs:
        raise ContractError("cutoffs must be non-empty")
    if split == "valid":
        split_pairs = ds.ub_valid
    elif split == "test":
        split_pairs = ds.ub_test
    else:
        raise ContractError(f"unknown split {split!r}")
    cutoffs = tuple(int(k) for k in cutoffs)
    max_k = max(cutoffs)

    relevant_lists = adjacency_lists(split_pairs, ds.num_users, key=0)
    train_lists = adjacency_lists(ds.ub_train, ds.num_users, key=0)
    valid_lists = (
        adjacency_lists(ds.ub_valid, ds.num_users, key=0)
        if (split == "test" and mask_valid_at_test)
        else None
    )
    eval_users = np.asarray(
        [u for u in range(ds.num_users) if relevant_lists[u].shape[0] > 0], dtype=np.int64
    )

    rankings = []
    relevant_sets = []
    sums = {(m, k): 0.0 for m in ("recall", "ndcg") for k in cutoffs}
    detail = {} if per_user else None
    for start in range(0, eval_users.shape[0], chunk_size):
        users = eval_users[start : start + chunk_size]
        scores = score_users(view, users)
        for row, u in enumerate(users):
            scores[row, train_lists[u]] = -np.inf
            if valid_lists is not None:
                scores[row, valid_lists[u]] = -np.inf
        # Stable sort of negated scores: ties resolve to ascending bundle id.
        order = np.argsort(-scores, axis=1, kind="stable")
        for row, u in enumerate(users):
            top = order[row, :max_k]
            top = top[np.isfinite(scores[row, top])]
            rel = relevant_lists[u]
            rankings.append(top)
            relevant_sets.append(rel)
            if per_user:
                detail[int(u)] = {}
            for k in cutoffs:
                r = recall_at_k(top, rel, k)
                n = ndcg_at_k(top, rel, k)
                sums[("recall", k)] += r
                sums[("ndcg", k)] += n
                if per_user:
                    detail[int(u)][("recall", k)] = r
                    detail[int(u)][("ndcg", k)] = n

    count = max(eval_users.shape[0], 1)
    metrics = {key: value / count for key, value in sums.items()}
    return RankingResult(
        split=split,
        user_ids=eval_users,
        rankings=tuple(rankings),
        relevant=tuple(relevant_sets),
        metrics=metrics,
        per_user=detail,
    )


def format_metrics(result: RankingResult, metrics=("recall", "ndcg")) -> str:
    """One tab-separated record per (split, metric, cutoff)."""
    lines = []
    for metric in metrics:
        for key in sorted(k for m, k in result.metrics if m == metric):
            lines.append(f"{result.split}\t{metric}\t{key}\t{result.metrics[(metric, key)]:.6f}")
    return "\n".join(lines) + "\n"
