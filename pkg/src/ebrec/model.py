"""Learnable parameter tables, the full forward pass, and scoring.

Four embedding tables are trained: users and bundles at the bundle level,
users and items at the item level.  The item-level user table can be
collapsed onto the bundle-level one with ``shared_user_embedding``, matching
the three-table parameter budget at the cost of tying the two views' layer-0
user embeddings.

The forward pass is linear end to end: two graph propagations followed by
the composer.  A user-bundle score is the sum of the two views' inner
products, which equals the inner product of the concatenated views.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from . import composer as composer_mod
from .composer import ComposerInputs
from .errors import ContractError, IngestionError
from .graph import BipartiteGraph, propagate

CHECKPOINT_MAGIC = b"EBR1"
FLAG_SHARED_USER = 1 << 0
FLAG_FLOAT32 = 1 << 1
FLAG_NO_MEDIATED = 1 << 2

TABLE_ORDER = ("user_bundle_level", "bundle_bundle_level", "item_item_level", "user_item_level")


@dataclass(frozen=True)
class ParameterSet:
    """The learnable embedding tables.

    ``user_item_level`` is None when the user embedding is shared across
    levels; ``user_item_table`` resolves to the effective table either way.
    """

    user_bundle_level: np.ndarray
    bundle_bundle_level: np.ndarray
    item_item_level: np.ndarray
    user_item_level: np.ndarray | None

    @property
    def shared_user_embedding(self) -> bool:
        return self.user_item_level is None

    @property
    def num_users(self) -> int:
        return self.user_bundle_level.shape[0]

    @property
    def num_bundles(self) -> int:
        return self.bundle_bundle_level.shape[0]

    @property
    def num_items(self) -> int:
        return self.item_item_level.shape[0]

    @property
    def width(self) -> int:
        return self.user_bundle_level.shape[1]

    @property
    def user_item_table(self) -> np.ndarray:
        if self.user_item_level is None:
            return self.user_bundle_level
        return self.user_item_level

    def tables(self):
        """Yield (name, table) for every distinct learnable table."""
        yield "user_bundle_level", self.user_bundle_level
        yield "bundle_bundle_level", self.bundle_bundle_level
        yield "item_item_level", self.item_item_level
        if self.user_item_level is not None:
            yield "user_item_level", self.user_item_level

    def copy(self) -> "ParameterSet":
        return ParameterSet(
            user_bundle_level=self.user_bundle_level.copy(),
            bundle_bundle_level=self.bundle_bundle_level.copy(),
            item_item_level=self.item_item_level.copy(),
            user_item_level=None if self.user_item_level is None else self.user_item_level.copy(),
        )


@dataclass(frozen=True)
class ViewEmbeddings:
    """All propagated embeddings of one forward pass.

    ``bundle_item_level`` is exactly ``bundle_mediated + bundle_affiliation``;
    when the mediated pathway is disabled the mediated table is all zeros.
    """

    user_bundle_level: np.ndarray
    bundle_bundle_level: np.ndarray
    user_item_level: np.ndarray
    item_item_level: np.ndarray
    bundle_affiliation: np.ndarray
    bundle_mediated: np.ndarray
    bundle_item_level: np.ndarray


def init_parameters(
    M: int,
    N: int,
    O: int,
    d: int,
    seed: int,
    shared_user_embedding: bool = False,
    dtype=np.float64,
) -> ParameterSet:
    """Xavier-normal tables: entries ~ N(0, 2 / (rows + cols)) per table.

    Each table draws from its own deterministic stream derived from the
    seed, so adding or removing the shared-user flag does not disturb the
    other tables.
    """
    if d < 1:
        raise ContractError(f"embedding width must be >= 1, got {d}")

    def draw(rows: int, stream: int) -> np.ndarray:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, stream])))
        std = np.sqrt(2.0 / (rows + d))
        return (rng.standard_normal((rows, d)) * std).astype(dtype)

    return ParameterSet(
        user_bundle_level=draw(M, 0),
        bundle_bundle_level=draw(O, 1),
        item_item_level=draw(N, 2),
        user_item_level=None if shared_user_embedding else draw(M, 3),
    )


def forward(
    params: ParameterSet,
    ub_graph: BipartiteGraph,
    ui_graph: BipartiteGraph,
    inputs: ComposerInputs,
    layers: int,
    use_mediated: bool = True,
) -> ViewEmbeddings:
    """Propagate both levels and compose the item-level bundle table."""
    if ub_graph.left_count != params.num_users or ub_graph.right_count != params.num_bundles:
        raise ContractError("user-bundle graph shape does not match parameter tables")
    if ui_graph.left_count != params.num_users or ui_graph.right_count != params.num_items:
        raise ContractError("user-item graph shape does not match parameter tables")
    ub = propagate(ub_graph, params.user_bundle_level, params.bundle_bundle_level, layers)
    ui = propagate(ui_graph, params.user_item_table, params.item_item_level, layers)
    ci = inputs.with_item_embeddings(ui.right_fused)
    affiliation = composer_mod.compose_affiliation(ci)
    if use_mediated:
        mediated = composer_mod.compose_mediated(ci)
    else:
        mediated = np.zeros_like(affiliation)
    return ViewEmbeddings(
        user_bundle_level=ub.left_fused,
        bundle_bundle_level=ub.right_fused,
        user_item_level=ui.left_fused,
        item_item_level=ui.right_fused,
        bundle_affiliation=affiliation,
        bundle_mediated=mediated,
        bundle_item_level=mediated + affiliation,
    )


def score(view: ViewEmbeddings, u: int, b: int) -> float:
    """Preference of user u for bundle b: sum of the two views' inner products."""
    M = view.user_bundle_level.shape[0]
    O = view.bundle_bundle_level.shape[0]
    if not (0 <= u < M):
        raise ContractError(f"user id {u} outside [0, {M})")
    if not (0 <= b < O):
        raise ContractError(f"bundle id {b} outside [0, {O})")
    return float(
        view.user_bundle_level[u] @ view.bundle_bundle_level[b]
        + view.user_item_level[u] @ view.bundle_item_level[b]
    )


def score_users(view: ViewEmbeddings, users: np.ndarray) -> np.ndarray:
    """Score every bundle for each listed user; rows align with ``users``."""
    users = np.asarray(users, dtype=np.int64)
    return (
        view.user_bundle_level[users] @ view.bundle_bundle_level.T
        + view.user_item_level[users] @ view.bundle_item_level.T
    )


def save_checkpoint(params: ParameterSet, path: str, use_mediated: bool = True) -> None:
    """Write the little-endian binary checkpoint.

    Header: magic "EBR1", then uint32 M, N, O, d, flags; tables follow as
    raw little-endian floats in the fixed declaration order (the item-level
    user table is omitted when shared).
    """
    flags = 0
    if params.shared_user_embedding:
        flags |= FLAG_SHARED_USER
    if params.user_bundle_level.dtype == np.float32:
        flags |= FLAG_FLOAT32
    if not use_mediated:
        flags |= FLAG_NO_MEDIATED
    header = CHECKPOINT_MAGIC + struct.pack(
        "<5I", params.num_users, params.num_items, params.num_bundles, params.width, flags
    )
    dtype = "<f4" if flags & FLAG_FLOAT32 else "<f8"
    with open(path, "wb") as fh:
        fh.write(header)
        for _, table in params.tables():
            fh.write(np.ascontiguousarray(table, dtype=dtype).tobytes())


def load_checkpoint(path: str) -> tuple[ParameterSet, dict]:
    """Read a checkpoint; returns the tables and a metadata dict.

    Metadata keys: M, N, O, d, shared_user_embedding, float32, use_mediated.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 24 or blob[:4] != CHECKPOINT_MAGIC:
        raise IngestionError(f"{path}: not a checkpoint file (bad magic)")
    M, N, O, d, flags = struct.unpack("<5I", blob[4:24])
    shared = bool(flags & FLAG_SHARED_USER)
    dtype = np.dtype("<f4") if flags & FLAG_FLOAT32 else np.dtype("<f8")
    shapes = [(M, d), (O, d), (N, d)] + ([] if shared else [(M, d)])
    expected = 24 + sum(r * c for r, c in shapes) * dtype.itemsize
    if len(blob) != expected:
        raise IngestionError(
            f"{path}: payload is {len(blob)} bytes, header implies {expected}"
        )
    offset = 24
    tables = []
    for rows, cols in shapes:
        nbytes = rows * cols * dtype.itemsize
        tables.append(np.frombuffer(blob, dtype=dtype, count=rows * cols, offset=offset).reshape(rows, cols).copy())
        offset += nbytes
    params = ParameterSet(
        user_bundle_level=tables[0],
        bundle_bundle_level=tables[1],
        item_item_level=tables[2],
        user_item_level=None if shared else tables[3],
    )
    meta = {
        "M": M,
        "N": N,
        "O": O,
        "d": d,
        "shared_user_embedding": shared,
        "float32": bool(flags & FLAG_FLOAT32),
        "use_mediated": not flags & FLAG_NO_MEDIATED,
    }
    return params, meta
