"""Degree-normalized bipartite propagation.

A bipartite relation is turned into a sparse operator whose edge (l, r)
carries the weight 1 / (sqrt(deg_l) * sqrt(deg_r)).  Propagation alternates
sides for a fixed number of layers with no nonlinearity and no feature
transform, and the per-layer outputs are fused by summation, so entities of
degree zero keep their layer-0 embedding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ContractError


@dataclass(frozen=True)
class BipartiteGraph:
    """Immutable normalized adjacency over one bipartite relation.

    ``ops`` caches the left-to-right operator (left_count x right_count CSR)
    and its transpose; both share the symmetric edge weights.
    """

    left_count: int
    right_count: int
    left_ids: np.ndarray
    right_ids: np.ndarray
    weights: np.ndarray
    ops: tuple = field(repr=False, default=None)

    @property
    def num_edges(self) -> int:
        return self.left_ids.shape[0]

    @property
    def forward_op(self) -> sp.csr_matrix:
        return self.ops[0]

    @property
    def backward_op(self) -> sp.csr_matrix:
        return self.ops[1]


@dataclass(frozen=True)
class PropagationResult:
    """Per-layer embeddings (0..L) and their exact elementwise sum."""

    left_layers: tuple
    right_layers: tuple
    left_fused: np.ndarray
    right_fused: np.ndarray

    @property
    def num_layers(self) -> int:
        return len(self.left_layers) - 1


def _as_pair_arrays(pairs) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(pairs, np.ndarray):
        if pairs.size == 0:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        return pairs[:, 0].astype(np.int64), pairs[:, 1].astype(np.int64)
    pair_list = sorted(pairs)
    if not pair_list:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    arr = np.asarray(pair_list, dtype=np.int64)
    return arr[:, 0], arr[:, 1]


def build_graph(pairs, left_count: int, right_count: int, dtype=np.float64) -> BipartiteGraph:
    """Build the symmetric-degree-normalized operator for a pair set.

    ``pairs`` is an (E, 2) array or an iterable of (left_id, right_id)
    tuples; duplicates are not expected (the dataset module deduplicates).
    """
    left_ids, right_ids = _as_pair_arrays(pairs)
    if left_ids.size:
        if left_ids.min() < 0 or left_ids.max() >= left_count:
            raise ContractError(f"left id outside [0, {left_count})")
        if right_ids.min() < 0 or right_ids.max() >= right_count:
            raise ContractError(f"right id outside [0, {right_count})")
    left_deg = np.bincount(left_ids, minlength=left_count).astype(np.float64)
    right_deg = np.bincount(right_ids, minlength=right_count).astype(np.float64)
    weights = np.empty(left_ids.shape[0], dtype=np.float64)
    if weights.size:
        weights[:] = 1.0 / (np.sqrt(left_deg[left_ids]) * np.sqrt(right_deg[right_ids]))
    weights = weights.astype(dtype)
    fwd = sp.csr_matrix(
        (weights, (left_ids, right_ids)), shape=(left_count, right_count), dtype=dtype
    )
    bwd = sp.csr_matrix(
        (weights, (right_ids, left_ids)), shape=(right_count, left_count), dtype=dtype
    )
    for arr in (left_ids, right_ids, weights):
        arr.setflags(write=False)
    return BipartiteGraph(
        left_count=left_count,
        right_count=right_count,
        left_ids=left_ids,
        right_ids=right_ids,
        weights=weights,
        ops=(fwd, bwd),
    )


def propagate(g: BipartiteGraph, left0: np.ndarray, right0: np.ndarray, layers: int) -> PropagationResult:
    """Run L layers of alternating linear propagation and sum the layers.

    Layer k of the left side is the weighted sum of layer k-1 of its right
    neighbors, and symmetrically.  With layers=0 the fused output is the
    input tables unchanged.
    """
    if layers < 0:
        raise ContractError(f"layer count must be >= 0, got {layers}")
    left0 = np.ascontiguousarray(left0)
    right0 = np.ascontiguousarray(right0)
    if left0.ndim != 2 or right0.ndim != 2 or left0.shape[1] != right0.shape[1]:
        raise ContractError(
            f"embedding width mismatch: left {left0.shape} vs right {right0.shape}"
        )
    if left0.shape[0] != g.left_count or right0.shape[0] != g.right_count:
        raise ContractError(
            f"table rows ({left0.shape[0]}, {right0.shape[0]}) do not match graph "
            f"counts ({g.left_count}, {g.right_count})"
        )
    left_layers = [left0]
    right_layers = [right0]
    for _ in range(layers):
        left_layers.append(g.forward_op @ right_layers[-1])
        right_layers.append(g.backward_op @ left_layers[-2])
    left_fused = left_layers[0].copy()
    for layer in left_layers[1:]:
        left_fused += layer
    right_fused = right_layers[0].copy()
    for layer in right_layers[1:]:
        right_fused += layer
    return PropagationResult(
        left_layers=tuple(left_layers),
        right_layers=tuple(right_layers),
        left_fused=left_fused,
        right_fused=right_fused,
    )


def edge_dropout(g: BipartiteGraph, rate: float, seed: int) -> BipartiteGraph:
    """Keep each original edge independently with probability 1 - rate.

    Degree normalization is recomputed from the surviving edges, so the
    thinned operator stays properly normalized; surviving messages are not
    rescaled by 1/(1-rate).  Deterministic given the seed.
    """
    if not (0.0 <= rate < 1.0):
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return g
    rng = np.random.Generator(np.random.PCG64(seed))
    keep = rng.random(g.num_edges) >= rate
    pairs = np.stack([g.left_ids[keep], g.right_ids[keep]], axis=1)
    return build_graph(pairs, g.left_count, g.right_count, dtype=g.weights.dtype)
