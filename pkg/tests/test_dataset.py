import os

import numpy as np
import pytest

from conftest import random_dataset, real_dataset_dir
from ebrec.dataset import (
    InteractionDataset,
    adjacency_lists,
    load_dataset,
    neighbor_sets,
    write_dataset,
)
from ebrec.errors import IngestionError


def test_toy_counts(toy_ds):
    assert toy_ds.num_users == 5
    assert toy_ds.num_bundles == 4
    assert toy_ds.num_items == 12
    assert toy_ds.ui_pairs.shape == (12, 2)
    assert toy_ds.ub_train.shape == (6, 2)
    assert toy_ds.ub_valid.shape == (2, 2)
    assert toy_ds.ub_test.shape == (2, 2)
    assert toy_ds.bi_pairs.shape == (12, 2)


def test_roundtrip_write_load(tmp_path):
    rng = np.random.Generator(np.random.PCG64(3))
    ds = random_dataset(rng, num_users=7, num_items=11, num_bundles=6)
    out = tmp_path / "ds"
    write_dataset(ds, str(out))
    back = load_dataset(str(out))
    for field in ("ui_pairs", "ub_train", "ub_valid", "ub_test", "bi_pairs"):
        np.testing.assert_array_equal(getattr(ds, field), getattr(back, field))
    assert (back.num_users, back.num_items, back.num_bundles) == (7, 11, 6)


def test_empty_relation_loads(tmp_path, toy_dir):
    out = tmp_path / "ds"
    write_dataset(load_dataset(toy_dir), str(out))
    (out / "user_item.txt").write_text("")
    ds = load_dataset(str(out))
    assert ds.ui_pairs.shape == (0, 2)


def test_missing_file_names_it(tmp_path, toy_dir):
    out = tmp_path / "ds"
    write_dataset(load_dataset(toy_dir), str(out))
    os.remove(out / "bundle_item.txt")
    with pytest.raises(IngestionError, match="bundle_item.txt"):
        load_dataset(str(out))


def test_out_of_range_id_reports_line(tmp_path, toy_dir):
    out = tmp_path / "ds"
    write_dataset(load_dataset(toy_dir), str(out))
    with open(out / "user_item.txt", "a", encoding="utf-8") as fh:
        fh.write("99\t0\n")
    with pytest.raises(IngestionError, match=r"user_item.txt:13"):
        load_dataset(str(out))


def test_duplicates_dropped_and_counted(tmp_path, toy_dir):
    out = tmp_path / "ds"
    write_dataset(load_dataset(toy_dir), str(out))
    with open(out / "user_item.txt", "a", encoding="utf-8") as fh:
        fh.write("0\t0\n0\t0\n")
    ds = load_dataset(str(out))
    assert ds.load_report.duplicates_dropped["user_item.txt"] == 2
    assert ds.ui_pairs.shape == (12, 2)


def test_overlapping_splits_rejected(tmp_path, toy_dir):
    out = tmp_path / "ds"
    write_dataset(load_dataset(toy_dir), str(out))
    with open(out / "user_bundle_valid.txt", "a", encoding="utf-8") as fh:
        fh.write("0\t0\n")  # already in train
    with pytest.raises(IngestionError, match="share"):
        load_dataset(str(out))


def test_neighbor_sets_single_edge():
    ds = InteractionDataset(
        num_users=2,
        num_items=3,
        num_bundles=2,
        ui_pairs=np.empty((0, 2), dtype=np.int64),
        ub_train=np.array([[0, 1]], dtype=np.int64),
        ub_valid=np.empty((0, 2), dtype=np.int64),
        ub_test=np.empty((0, 2), dtype=np.int64),
        bi_pairs=np.empty((0, 2), dtype=np.int64),
    )
    nbrs = neighbor_sets(ds)
    np.testing.assert_array_equal(nbrs.bundle_users[1], [0])
    np.testing.assert_array_equal(nbrs.bundle_users[0], [])


def test_neighbor_sets_direct_readoff():
    ds = InteractionDataset(
        num_users=2,
        num_items=6,
        num_bundles=1,
        ui_pairs=np.array([[0, 2], [0, 5], [1, 2]], dtype=np.int64),
        ub_train=np.empty((0, 2), dtype=np.int64),
        ub_valid=np.empty((0, 2), dtype=np.int64),
        ub_test=np.empty((0, 2), dtype=np.int64),
        bi_pairs=np.empty((0, 2), dtype=np.int64),
    )
    nbrs = neighbor_sets(ds)
    np.testing.assert_array_equal(nbrs.user_items[0], [2, 5])
    np.testing.assert_array_equal(nbrs.user_items[1], [2])


def test_neighbor_sets_match_bruteforce_scan():
    rng = np.random.Generator(np.random.PCG64(11))
    ds = random_dataset(rng, num_users=8, num_items=12, num_bundles=7, ui_edges=50)
    nbrs = neighbor_sets(ds)
    for u in range(ds.num_users):
        expect = sorted(i for uu, i in ds.ui_pairs.tolist() if uu == u)
        assert nbrs.user_items[u].tolist() == expect
    for b in range(ds.num_bundles):
        expect = sorted(u for u, bb in ds.ub_train.tolist() if bb == b)
        assert nbrs.bundle_users[b].tolist() == expect
        expect_items = sorted(i for bb, i in ds.bi_pairs.tolist() if bb == b)
        assert nbrs.bundle_items[b].tolist() == expect_items


def test_neighbor_sets_pure_function(toy_ds):
    a = neighbor_sets(toy_ds)
    b = neighbor_sets(toy_ds)
    for u in range(toy_ds.num_users):
        np.testing.assert_array_equal(a.user_items[u], b.user_items[u])
    for bb in range(toy_ds.num_bundles):
        np.testing.assert_array_equal(a.bundle_users[bb], b.bundle_users[bb])


def test_adjacency_lists_grouping_by_right_column():
    pairs = np.array([[0, 1], [2, 1], [1, 0]], dtype=np.int64)
    lists = adjacency_lists(pairs, 2, key=1)
    np.testing.assert_array_equal(lists[0], [1])
    np.testing.assert_array_equal(lists[1], [0, 2])


@pytest.mark.skipif(real_dataset_dir("youshu") is None,
                    reason="real Youshu dataset not mounted")
def test_youshu_published_counts():
    ds = load_dataset(real_dataset_dir("youshu"))
    assert ds.num_users == 8039
    assert ds.num_items == 32770
    assert ds.num_bundles == 4771
    assert ds.ui_pairs.shape[0] == 138515
    assert ds.bi_pairs.shape[0] == 176667
