"""Triple-graph dataset ingestion.

A dataset directory holds three binary relations as tab-separated id pairs:
user-item interactions, user-bundle interactions (already split into
train/valid/test), and bundle-item affiliations.  Entity counts come from a
mandatory ``data_size.txt`` header so that entities without any interaction
still exist in the id space.

Layout (0-based integer ids, one pair per line)::

    data_size.txt            "M<TAB>O<TAB>N"  (users, bundles, items)
    user_item.txt            "u<TAB>i"
    user_bundle_train.txt    "u<TAB>b"
    user_bundle_valid.txt    "u<TAB>b"
    user_bundle_test.txt     "u<TAB>b"
    bundle_item.txt          "b<TAB>i"
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import IngestionError

SIZE_FILE = "data_size.txt"
UI_FILE = "user_item.txt"
UB_TRAIN_FILE = "user_bundle_train.txt"
UB_VALID_FILE = "user_bundle_valid.txt"
UB_TEST_FILE = "user_bundle_test.txt"
BI_FILE = "bundle_item.txt"

PAIR_FILES = (UI_FILE, UB_TRAIN_FILE, UB_VALID_FILE, UB_TEST_FILE, BI_FILE)


@dataclass(frozen=True)
class LoadReport:
    """Per-file counters recorded while reading a dataset directory."""

    lines_read: dict = field(default_factory=dict)
    duplicates_dropped: dict = field(default_factory=dict)

    @property
    def total_duplicates(self) -> int:
        return sum(self.duplicates_dropped.values())


@dataclass(frozen=True)
class InteractionDataset:
    """The three relation matrices plus the published user-bundle splits.

    Pair arrays are int64 of shape (E, 2), deduplicated and sorted
    lexicographically, with the read-only flag set.  The dataset is
    immutable after load and safe for concurrent readers.
    """

    num_users: int
    num_items: int
    num_bundles: int
    ui_pairs: np.ndarray
    ub_train: np.ndarray
    ub_valid: np.ndarray
    ub_test: np.ndarray
    bi_pairs: np.ndarray
    load_report: LoadReport | None = None


@dataclass(frozen=True)
class NeighborSets:
    """Sorted, duplicate-free adjacency lists read off the relation pairs.

    ``bundle_users`` comes from the train split of the user-bundle relation;
    ``user_items`` and ``bundle_items`` come from the full user-item and
    bundle-item relations.
    """

    bundle_users: tuple
    user_items: tuple
    bundle_items: tuple


def _canonical_pairs(rows: list, name: str) -> tuple[np.ndarray, int]:
    """Deduplicate and lexicographically sort raw (left, right) rows.

    Returns the canonical (E, 2) array and the number of duplicates dropped.
    """
    if not rows:
        arr = np.empty((0, 2), dtype=np.int64)
        arr.setflags(write=False)
        return arr, 0
    arr = np.asarray(rows, dtype=np.int64)
    uniq = np.unique(arr, axis=0)
    uniq.setflags(write=False)
    return uniq, arr.shape[0] - uniq.shape[0]


def _read_pair_file(path: str, name: str, left_limit: int, right_limit: int):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2:
                raise IngestionError(f"{name}:{lineno}: expected two ids, got {line.strip()!r}")
            try:
                left, right = int(parts[0]), int(parts[1])
            except ValueError:
                raise IngestionError(f"{name}:{lineno}: non-integer id in {line.strip()!r}") from None
            if not (0 <= left < left_limit):
                raise IngestionError(
                    f"{name}:{lineno}: left id {left} outside declared range [0, {left_limit})"
                )
            if not (0 <= right < right_limit):
                raise IngestionError(
                    f"{name}:{lineno}: right id {right} outside declared range [0, {right_limit})"
                )
            rows.append((left, right))
    return rows


def _check_disjoint(a: np.ndarray, b: np.ndarray, name_a: str, name_b: str) -> None:
    if a.size == 0 or b.size == 0:
        return
    merged = np.concatenate([a, b], axis=0)
    if np.unique(merged, axis=0).shape[0] != merged.shape[0]:
        raise IngestionError(f"splits {name_a} and {name_b} share at least one pair")


def load_dataset(dir_path: str) -> InteractionDataset:
    """Read a dataset directory into an InteractionDataset.

    Duplicate pairs are dropped silently but counted in the load report.
    Missing files, malformed lines, out-of-range ids, and overlapping
    user-bundle splits raise IngestionError.
    """
    size_path = os.path.join(dir_path, SIZE_FILE)
    if not os.path.isfile(size_path):
        raise IngestionError(f"missing size header file {size_path}")
    with open(size_path, "r", encoding="utf-8") as fh:
        tokens = fh.read().split()
    if len(tokens) != 3:
        raise IngestionError(f"{SIZE_FILE}: expected 'M<TAB>O<TAB>N', got {tokens!r}")
    try:
        num_users, num_bundles, num_items = (int(t) for t in tokens)
    except ValueError:
        raise IngestionError(f"{SIZE_FILE}: non-integer entity count in {tokens!r}") from None
    if min(num_users, num_bundles, num_items) < 0:
        raise IngestionError(f"{SIZE_FILE}: negative entity count in {tokens!r}")

    limits = {
        UI_FILE: (num_users, num_items),
        UB_TRAIN_FILE: (num_users, num_bundles),
        UB_VALID_FILE: (num_users, num_bundles),
        UB_TEST_FILE: (num_users, num_bundles),
        BI_FILE: (num_bundles, num_items),
    }
    arrays = {}
    lines_read = {}
    duplicates = {}
    for name in PAIR_FILES:
        path = os.path.join(dir_path, name)
        if not os.path.isfile(path):
            raise IngestionError(f"missing relation file {path}")
        rows = _read_pair_file(path, name, *limits[name])
        lines_read[name] = len(rows)
        arrays[name], duplicates[name] = _canonical_pairs(rows, name)

    _check_disjoint(arrays[UB_TRAIN_FILE], arrays[UB_VALID_FILE], UB_TRAIN_FILE, UB_VALID_FILE)
    _check_disjoint(arrays[UB_TRAIN_FILE], arrays[UB_TEST_FILE], UB_TRAIN_FILE, UB_TEST_FILE)
    _check_disjoint(arrays[UB_VALID_FILE], arrays[UB_TEST_FILE], UB_VALID_FILE, UB_TEST_FILE)

    return InteractionDataset(
        num_users=num_users,
        num_items=num_items,
        num_bundles=num_bundles,
        ui_pairs=arrays[UI_FILE],
        ub_train=arrays[UB_TRAIN_FILE],
        ub_valid=arrays[UB_VALID_FILE],
        ub_test=arrays[UB_TEST_FILE],
        bi_pairs=arrays[BI_FILE],
        load_report=LoadReport(lines_read=lines_read, duplicates_dropped=duplicates),
    )


def write_dataset(ds: InteractionDataset, dir_path: str) -> None:
    """Write a dataset back to the directory layout read by load_dataset."""
    os.makedirs(dir_path, exist_ok=True)
    with open(os.path.join(dir_path, SIZE_FILE), "w", encoding="utf-8") as fh:
        fh.write(f"{ds.num_users}\t{ds.num_bundles}\t{ds.num_items}\n")
    contents = {
        UI_FILE: ds.ui_pairs,
        UB_TRAIN_FILE: ds.ub_train,
        UB_VALID_FILE: ds.ub_valid,
        UB_TEST_FILE: ds.ub_test,
        BI_FILE: ds.bi_pairs,
    }
    for name, pairs in contents.items():
        with open(os.path.join(dir_path, name), "w", encoding="utf-8") as fh:
            for left, right in pairs:
                fh.write(f"{left}\t{right}\n")


def adjacency_lists(pairs: np.ndarray, count: int, key: int = 0) -> tuple:
    """Group a canonical pair array into per-entity sorted neighbor arrays.

    ``key`` selects the grouping column (0 = left, 1 = right); the other
    column supplies the neighbor ids.  Entities without any pair get an
    empty array.
    """
    other = 1 - key
    lists = [np.empty(0, dtype=np.int64) for _ in range(count)]
    if pairs.shape[0] == 0:
        return tuple(lists)
    order = np.lexsort((pairs[:, other], pairs[:, key]))
    keys = pairs[order, key]
    vals = pairs[order, other]
    boundaries = np.flatnonzero(np.diff(keys)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [keys.shape[0]]])
    for s, e in zip(starts, ends):
        arr = vals[s:e].copy()
        arr.setflags(write=False)
        lists[keys[s]] = arr
    return tuple(lists)


def neighbor_sets(ds: InteractionDataset) -> NeighborSets:
    """Materialize the observed adjacency lists used downstream.

    Bundle-to-user lists come from the train split only; validation and
    test interactions never inform graph construction.
    """
    return NeighborSets(
        bundle_users=adjacency_lists(ds.ub_train, ds.num_bundles, key=1),
        user_items=adjacency_lists(ds.ui_pairs, ds.num_users, key=0),
        bundle_items=adjacency_lists(ds.bi_pairs, ds.num_bundles, key=0),
    )
