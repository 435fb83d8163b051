import math

import numpy as np
import pytest

from conftest import random_dataset
from ebrec.dataset import InteractionDataset
from ebrec.errors import ContractError
from ebrec.evaluation import format_metrics, ndcg_at_k, rank_all, recall_at_k
from ebrec.model import ViewEmbeddings


def make_view(rng, num_users, num_bundles, d=4):
    zeros = np.zeros((1, d))
    return ViewEmbeddings(
        user_bundle_level=rng.standard_normal((num_users, d)),
        bundle_bundle_level=rng.standard_normal((num_bundles, d)),
        user_item_level=rng.standard_normal((num_users, d)),
        item_item_level=zeros,
        bundle_affiliation=np.zeros((num_bundles, d)),
        bundle_mediated=np.zeros((num_bundles, d)),
        bundle_item_level=rng.standard_normal((num_bundles, d)),
    )


def reference_metrics(view, ds, split, cutoffs, mask_valid_at_test=True):
    """Brute-force reference: dense score rows, python sort, literal formulas."""
    split_pairs = ds.ub_valid if split == "valid" else ds.ub_test
    by_user = {}
    for u, b in split_pairs.tolist():
        by_user.setdefault(u, set()).add(b)
    train_by_user = {}
    for u, b in ds.ub_train.tolist():
        train_by_user.setdefault(u, set()).add(b)
    valid_by_user = {}
    for u, b in ds.ub_valid.tolist():
        valid_by_user.setdefault(u, set()).add(b)
    totals = {(m, k): 0.0 for m in ("recall", "ndcg") for k in cutoffs}
    n_users = 0
    for u in range(ds.num_users):
        relevant = by_user.get(u, set())
        if not relevant:
            continue
        n_users += 1
        masked = set(train_by_user.get(u, set()))
        if split == "test" and mask_valid_at_test:
            masked |= valid_by_user.get(u, set())
        scores = [
            float(
                view.user_bundle_level[u] @ view.bundle_bundle_level[b]
                + view.user_item_level[u] @ view.bundle_item_level[b]
            )
            for b in range(ds.num_bundles)
        ]
        candidates = [b for b in range(ds.num_bundles) if b not in masked]
        ranked = sorted(candidates, key=lambda b: (-scores[b], b))
        for k in cutoffs:
            top = ranked[:k]
            hits = [b for b in top if b in relevant]
            totals[("recall", k)] += len(hits) / len(relevant)
            dcg = sum(1.0 / math.log2(top.index(b) + 2) for b in hits)
            idcg = sum(1.0 / math.log2(p + 2) for p in range(min(k, len(relevant))))
            totals[("ndcg", k)] += dcg / idcg
    return {key: val / max(n_users, 1) for key, val in totals.items()}


def test_recall_trivial_cases():
    assert recall_at_k([1, 3], {1}, 2) == 1.0
    assert recall_at_k([1, 3], {1, 2}, 2) == 0.5
    assert math.isnan(recall_at_k([1, 3], set(), 2))


def test_recall_matches_set_oracle():
    rng = np.random.Generator(np.random.PCG64(61))
    for _ in range(50):
        ranked = rng.permutation(30)[:15].tolist()
        relevant = set(rng.choice(30, size=rng.integers(1, 6), replace=False).tolist())
        k = int(rng.integers(1, 15))
        expect = len(set(ranked[:k]) & relevant) / len(relevant)
        assert recall_at_k(ranked, relevant, k) == pytest.approx(expect, abs=1e-15)


def test_ndcg_perfect_ranking():
    assert ndcg_at_k([4, 7, 1], {4, 7, 1}, 3) == pytest.approx(1.0, abs=1e-15)
    assert ndcg_at_k([4], {4}, 1) == pytest.approx(1.0, abs=1e-15)


def test_ndcg_single_relevant_positions():
    assert ndcg_at_k([9, 4], {4}, 2) == pytest.approx(1.0 / math.log2(3), abs=1e-12)
    assert ndcg_at_k([9, 5, 4], {4}, 3) == pytest.approx(0.5, abs=1e-15)


def test_ndcg_matches_formula_oracle():
    rng = np.random.Generator(np.random.PCG64(62))
    for _ in range(100):
        ranked = rng.permutation(25)[: rng.integers(1, 20)].tolist()
        relevant = set(rng.choice(25, size=rng.integers(1, 7), replace=False).tolist())
        k = int(rng.integers(1, 20))
        dcg = sum(
            1.0 / math.log2(pos + 2)
            for pos, b in enumerate(ranked[:k])
            if b in relevant
        )
        idcg = sum(1.0 / math.log2(pos + 2) for pos in range(min(k, len(relevant))))
        assert ndcg_at_k(ranked, relevant, k) == pytest.approx(dcg / idcg, abs=1e-12)


def test_cutoff_contract():
    with pytest.raises(ContractError):
        recall_at_k([0], {0}, 0)
    with pytest.raises(ContractError):
        ndcg_at_k([0], {0}, 0)


def test_rank_all_matches_reference_oracle():
    rng = np.random.Generator(np.random.PCG64(63))
    for trial in range(5):
        ds = random_dataset(rng, num_users=6, num_items=8, num_bundles=9,
                            ub_edges=18, ui_edges=12, bi_edges=10)
        view = make_view(rng, 6, 9)
        for split in ("valid", "test"):
            result = rank_all(view, ds, split=split, cutoffs=(2, 5))
            expect = reference_metrics(view, ds, split, (2, 5))
            for key in expect:
                assert result.metrics[key] == pytest.approx(expect[key], abs=1e-12)


def test_rank_all_masks_train_and_valid():
    rng = np.random.Generator(np.random.PCG64(64))
    ds = random_dataset(rng, num_users=5, num_items=6, num_bundles=8, ub_edges=20)
    view = make_view(rng, 5, 8)
    train = {tuple(p) for p in ds.ub_train.tolist()}
    valid = {tuple(p) for p in ds.ub_valid.tolist()}
    res = rank_all(view, ds, split="test", cutoffs=(8,))
    for u, ranked in zip(res.user_ids, res.rankings):
        for b in ranked:
            assert (int(u), int(b)) not in train
            assert (int(u), int(b)) not in valid
    res_valid = rank_all(view, ds, split="valid", cutoffs=(8,))
    for u, ranked in zip(res_valid.user_ids, res_valid.rankings):
        for b in ranked:
            assert (int(u), int(b)) not in train


def test_rank_all_mask_valid_switchable():
    rng = np.random.Generator(np.random.PCG64(65))
    ds = random_dataset(rng, num_users=5, num_items=6, num_bundles=8, ub_edges=20)
    view = make_view(rng, 5, 8)
    masked = rank_all(view, ds, split="test", cutoffs=(8,), mask_valid_at_test=True)
    unmasked = rank_all(view, ds, split="test", cutoffs=(8,), mask_valid_at_test=False)
    lengths_m = sum(len(r) for r in masked.rankings)
    lengths_u = sum(len(r) for r in unmasked.rankings)
    assert lengths_u >= lengths_m


def test_rank_all_tie_break_ascending_id():
    ds = InteractionDataset(
        num_users=1,
        num_items=1,
        num_bundles=4,
        ui_pairs=np.empty((0, 2), dtype=np.int64),
        ub_train=np.empty((0, 2), dtype=np.int64),
        ub_valid=np.array([[0, 2]], dtype=np.int64),
        ub_test=np.empty((0, 2), dtype=np.int64),
        bi_pairs=np.empty((0, 2), dtype=np.int64),
    )
    view = ViewEmbeddings(
        user_bundle_level=np.ones((1, 2)),
        bundle_bundle_level=np.zeros((4, 2)),  # all scores tie at 0
        user_item_level=np.zeros((1, 2)),
        item_item_level=np.zeros((1, 2)),
        bundle_affiliation=np.zeros((4, 2)),
        bundle_mediated=np.zeros((4, 2)),
        bundle_item_level=np.zeros((4, 2)),
    )
    res = rank_all(view, ds, split="valid", cutoffs=(4,))
    np.testing.assert_array_equal(res.rankings[0], [0, 1, 2, 3])


def test_rank_all_monotone_in_k():
    rng = np.random.Generator(np.random.PCG64(66))
    ds = random_dataset(rng, num_users=6, num_items=6, num_bundles=10, ub_edges=24)
    view = make_view(rng, 6, 10)
    ks = (1, 2, 4, 8)
    res = rank_all(view, ds, split="valid", cutoffs=ks, per_user=True)
    for u, detail in res.per_user.items():
        for lo, hi in zip(ks, ks[1:]):
            assert detail[("recall", hi)] >= detail[("recall", lo)] - 1e-12
            assert detail[("ndcg", hi)] >= detail[("ndcg", lo)] - 1e-12


def test_rank_all_reproducible():
    rng = np.random.Generator(np.random.PCG64(67))
    ds = random_dataset(rng, num_users=6, num_items=6, num_bundles=10, ub_edges=24)
    view = make_view(rng, 6, 10)
    a = rank_all(view, ds, split="valid", cutoffs=(5,))
    b = rank_all(view, ds, split="valid", cutoffs=(5,))
    assert a.metrics == b.metrics
    for ra, rb in zip(a.rankings, b.rankings):
        np.testing.assert_array_equal(ra, rb)


def test_metrics_in_unit_interval():
    rng = np.random.Generator(np.random.PCG64(68))
    for _ in range(5):
        ds = random_dataset(rng, num_users=5, num_items=6, num_bundles=7, ub_edges=16)
        view = make_view(rng, 5, 7)
        res = rank_all(view, ds, split="test", cutoffs=(1, 3, 7))
        for value in res.metrics.values():
            assert -1e-12 <= value <= 1.0 + 1e-12


def test_format_metrics_layout():
    rng = np.random.Generator(np.random.PCG64(69))
    ds = random_dataset(rng, num_users=5, num_items=6, num_bundles=7, ub_edges=16)
    view = make_view(rng, 5, 7)
    res = rank_all(view, ds, split="valid", cutoffs=(2, 4))
    text = format_metrics(res)
    lines = text.strip().split("\n")
    assert len(lines) == 4
    assert lines[0].startswith("valid\trecall\t2\t")
    assert lines[3].startswith("valid\tndcg\t4\t")


def test_unknown_split_rejected(toy_ds):
    rng = np.random.Generator(np.random.PCG64(70))
    view = make_view(rng, 5, 4)
    with pytest.raises(ContractError):
        rank_all(view, toy_ds, split="train")
    with pytest.raises(ContractError):
        rank_all(view, toy_ds, split="valid", cutoffs=())
