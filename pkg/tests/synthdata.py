"""Deterministic synthetic datasets with planted topic structure.

Users, items, and bundles are partitioned into topics.  Bundles contain
items of their own topic; users interact mostly with bundles and items of
their own topic, with a configurable noise fraction.  Observed user-item
interactions are kept sparse and drawn from the first half of each topic's
item block, while bundles draw from the whole block, so a bundle's own
items carry weaker collaborative signal than the items its users touch.
This is the regime where the mediated composition pathway and predictor
augmentation have room to help.
"""

from dataclasses import dataclass

import numpy as np

from ebrec.dataset import InteractionDataset


@dataclass(frozen=True)
class SynthSpec:
    num_topics: int = 10
    users_per_topic: int = 30
    items_per_topic: int = 40
    bundles_per_topic: int = 12
    user_items_lo: int = 2
    user_items_hi: int = 4
    bundle_size_lo: int = 3
    bundle_size_hi: int = 6
    user_bundles_lo: int = 4
    user_bundles_hi: int = 7
    ui_noise: float = 0.1
    ub_noise: float = 0.1
    seed: int = 0


def generate(spec: SynthSpec = SynthSpec()) -> InteractionDataset:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, 977])))
    T = spec.num_topics
    M = T * spec.users_per_topic
    N = T * spec.items_per_topic
    O = T * spec.bundles_per_topic

    def topic_items(t):
        return np.arange(t * spec.items_per_topic, (t + 1) * spec.items_per_topic)

    def topic_bundles(t):
        return np.arange(t * spec.bundles_per_topic, (t + 1) * spec.bundles_per_topic)

    bi = []
    for b in range(O):
        t = b // spec.bundles_per_topic
        size = rng.integers(spec.bundle_size_lo, spec.bundle_size_hi + 1)
        items = rng.choice(topic_items(t), size=size, replace=False)
        bi.extend((b, int(i)) for i in items)

    ui = []
    ub_train, ub_valid, ub_test = [], [], []
    for u in range(M):
        t = u // spec.users_per_topic
        # observed items: sparse, from the "popular" half of the topic block
        pool = topic_items(t)[: spec.items_per_topic // 2]
        k = rng.integers(spec.user_items_lo, spec.user_items_hi + 1)
        items = set(int(i) for i in rng.choice(pool, size=min(k, pool.size), replace=False))
        for i in sorted(items):
            if rng.random() < spec.ui_noise:
                i = int(rng.integers(0, N))
            ui.append((u, i))

        n_b = rng.integers(spec.user_bundles_lo, spec.user_bundles_hi + 1)
        n_b = min(n_b, spec.bundles_per_topic)
        bundles = list(rng.choice(topic_bundles(t), size=n_b, replace=False))
        n_valid = 2 if n_b >= 5 else (1 if n_b >= 3 else 0)
        n_test = 1 if n_b >= 3 else 0
        for j, b in enumerate(bundles):
            b = int(b)
            if rng.random() < spec.ub_noise:
                b = int(rng.integers(0, O))
            if j < n_valid:
                ub_valid.append((u, b))
            elif j < n_valid + n_test:
                ub_test.append((u, b))
            else:
                ub_train.append((u, b))

    def canon(rows):
        if not rows:
            return np.empty((0, 2), dtype=np.int64)
        return np.unique(np.asarray(rows, dtype=np.int64), axis=0)

    train = canon(ub_train)
    valid = canon(ub_valid)
    test = canon(ub_test)
    # noise can duplicate a pair across splits; keep the train copy
    train_keys = set(map(tuple, train.tolist()))
    valid = np.asarray(
        [p for p in valid.tolist() if tuple(p) not in train_keys], dtype=np.int64
    ).reshape(-1, 2)
    seen = train_keys | set(map(tuple, valid.tolist()))
    test = np.asarray(
        [p for p in test.tolist() if tuple(p) not in seen], dtype=np.int64
    ).reshape(-1, 2)
    return InteractionDataset(
        num_users=M,
        num_items=N,
        num_bundles=O,
        ui_pairs=canon(ui),
        ub_train=train,
        ub_valid=valid,
        ub_test=test,
        bi_pairs=canon(bi),
    )
