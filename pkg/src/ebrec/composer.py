"""Item-level bundle composition.

A bundle's item-level embedding is the sum of two pathways over the same
item table: the affiliation pathway averages the items the bundle contains,
and the mediated pathway averages, over the bundle's interacting users, each
user's average interacted-item embedding.  Both pathways are realized as
row-normalized sparse operators so that accumulation happens in ascending id
order with f64 accumulators, which makes the outputs bit-reproducible and
invariant to the ordering of the input neighbor lists.

Empty sets contribute zero vectors: a bundle with no items or no users, and
a user with no items, never divide by zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .errors import ContractError


def _row_mean_op(lists, n_rows: int, n_cols: int, dtype) -> sp.csr_matrix:
    """CSR operator whose row r averages the columns listed in lists[r].

    Rows with empty lists stay all-zero.  Column indices are sorted so CSR
    matmul accumulates in ascending id order.
    """
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    lengths = np.fromiter((len(l) for l in lists), dtype=np.int64, count=n_rows)
    np.cumsum(lengths, out=indptr[1:])
    total = int(indptr[-1])
    indices = np.empty(total, dtype=np.int64)
    data = np.empty(total, dtype=np.float64)
    for r, neighbors in enumerate(lists):
        if len(neighbors) == 0:
            continue
        arr = np.sort(np.asarray(neighbors, dtype=np.int64))
        if arr[0] < 0 or arr[-1] >= n_cols:
            raise ContractError(f"row {r}: neighbor id outside [0, {n_cols})")
        s, e = indptr[r], indptr[r + 1]
        indices[s:e] = arr
        data[s:e] = 1.0 / arr.shape[0]
    mat = sp.csr_matrix((data.astype(dtype), indices, indptr), shape=(n_rows, n_cols))
    return mat


@dataclass(frozen=True)
class ComposerInputs:
    """Neighbor structure and the item table the composer operates on.

    Built once per training run via ``ComposerInputs.build``; the item
    embeddings are swapped per forward pass with ``with_item_embeddings``
    while the cached sparse operators are shared.
    """

    num_users: int
    num_items: int
    num_bundles: int
    bundle_items: tuple
    bundle_users: tuple
    user_items: tuple
    item_embeddings: np.ndarray | None = None
    affiliation_op: sp.csr_matrix = field(repr=False, default=None)
    bundle_user_op: sp.csr_matrix = field(repr=False, default=None)
    user_item_op: sp.csr_matrix = field(repr=False, default=None)

    @staticmethod
    def build(
        bundle_items,
        bundle_users,
        user_items,
        num_users: int,
        num_items: int,
        item_embeddings: np.ndarray | None = None,
        dtype=np.float64,
    ) -> "ComposerInputs":
        num_bundles = len(bundle_items)
        if len(bundle_users) != num_bundles:
            raise ContractError("bundle_items and bundle_users disagree on bundle count")
        if len(user_items) != num_users:
            raise ContractError(f"user_items must have {num_users} entries")
        return ComposerInputs(
            num_users=num_users,
            num_items=num_items,
            num_bundles=num_bundles,
            bundle_items=tuple(bundle_items),
            bundle_users=tuple(bundle_users),
            user_items=tuple(user_items),
            item_embeddings=item_embeddings,
            affiliation_op=_row_mean_op(bundle_items, num_bundles, num_items, dtype),
            bundle_user_op=_row_mean_op(bundle_users, num_bundles, num_users, dtype),
            user_item_op=_row_mean_op(user_items, num_users, num_items, dtype),
        )

    def with_item_embeddings(self, item_embeddings: np.ndarray) -> "ComposerInputs":
        return replace(self, item_embeddings=item_embeddings)


def _require_embeddings(inputs: ComposerInputs) -> np.ndarray:
    emb = inputs.item_embeddings
    if emb is None:
        raise ContractError("composer inputs carry no item embeddings")
    if emb.ndim != 2 or emb.shape[0] != inputs.num_items:
        raise ContractError(
            f"item table shape {emb.shape} does not match item count {inputs.num_items}"
        )
    return emb


def compose_affiliation(inputs: ComposerInputs) -> np.ndarray:
    """Affiliation pathway: mean of each bundle's own item embeddings."""
    return inputs.affiliation_op @ _require_embeddings(inputs)


def compose_mediated(inputs: ComposerInputs) -> np.ndarray:
    """Mediated pathway: bundle -> users -> items nested mean.

    Averages, over the bundle's interacting users, each user's mean
    interacted-item embedding.
    """
    emb = _require_embeddings(inputs)
    return inputs.bundle_user_op @ (inputs.user_item_op @ emb)


def compose(inputs: ComposerInputs) -> np.ndarray:
    """Item-level bundle table: unweighted sum of the two pathways."""
    return compose_mediated(inputs) + compose_affiliation(inputs)


def backprop_affiliation(inputs: ComposerInputs, grad_bundles: np.ndarray) -> np.ndarray:
    """Gradient of compose_affiliation with respect to the item table."""
    return inputs.affiliation_op.T @ grad_bundles


def backprop_mediated(inputs: ComposerInputs, grad_bundles: np.ndarray) -> np.ndarray:
    """Gradient of compose_mediated with respect to the item table."""
    return inputs.user_item_op.T @ (inputs.bundle_user_op.T @ grad_bundles)
