import os

import numpy as np
import pytest

from ebrec.dataset import InteractionDataset, load_dataset

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
TOY_DIR = os.path.join(REPO_ROOT, "data", "toy")

REQUIRED_FILES = (
    "data_size.txt",
    "user_item.txt",
    "user_bundle_train.txt",
    "user_bundle_valid.txt",
    "user_bundle_test.txt",
    "bundle_item.txt",
)


def real_dataset_dir(name: str):
    """Directory of a real dataset (youshu/netease/ifashion) if mounted."""
    candidates = []
    env_root = os.environ.get("EBREC_DATA_DIR")
    if env_root:
        candidates.append(os.path.join(env_root, name))
    candidates.append(os.path.join(REPO_ROOT, "data", name))
    for cand in candidates:
        if all(os.path.isfile(os.path.join(cand, f)) for f in REQUIRED_FILES):
            return cand
    return None


@pytest.fixture(scope="session")
def toy_dir():
    return TOY_DIR


@pytest.fixture(scope="session")
def toy_ds():
    return load_dataset(TOY_DIR)


def random_dataset(rng, num_users=6, num_items=15, num_bundles=5,
                   ui_edges=20, ub_edges=10, bi_edges=14) -> InteractionDataset:
    """A random dataset with non-empty train split; valid/test may be empty."""

    def sample_pairs(n_left, n_right, count):
        total = n_left * n_right
        count = min(count, total)
        flat = rng.choice(total, size=count, replace=False)
        pairs = np.stack([flat // n_right, flat % n_right], axis=1).astype(np.int64)
        return np.unique(pairs, axis=0)

    ub_all = sample_pairs(num_users, num_bundles, ub_edges + 4)
    order = rng.permutation(ub_all.shape[0])
    n_valid = max(1, ub_all.shape[0] // 5)
    n_test = max(1, ub_all.shape[0] // 5)
    valid = ub_all[np.sort(order[:n_valid])]
    test = ub_all[np.sort(order[n_valid : n_valid + n_test])]
    train = ub_all[np.sort(order[n_valid + n_test :])]
    return InteractionDataset(
        num_users=num_users,
        num_items=num_items,
        num_bundles=num_bundles,
        ui_pairs=sample_pairs(num_users, num_items, ui_edges),
        ub_train=train,
        ub_valid=valid,
        ub_test=test,
        bi_pairs=sample_pairs(num_bundles, num_items, bi_edges),
    )
