"""Joint ranking + cross-view contrastive objective with exact gradients.

The total loss is

    total = bpr + lambda1 * (contrast_b + contrast_u) + lambda2 * l2

where bpr is the mean pairwise log-sigmoid ranking loss over sampled
triplets, the contrastive terms align each entity's bundle-level and
item-level embeddings with an InfoNCE over cosine similarities, and l2 is
the squared norm of the raw parameter tables.

Everything upstream of the losses (propagation, composition, scoring) is
linear in the parameter tables, so backpropagation through a propagation is
the same propagation applied to the fused-output gradient: the stacked
two-sided operator is symmetric.  Gradients returned here are exact, which
the test suite verifies against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import composer as composer_mod
from .composer import ComposerInputs
from .errors import ContractError, NumericalError
from .graph import BipartiteGraph, propagate
from .model import ParameterSet

NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class Batch:
    """One training batch of (user, positive bundle, negative bundle) triplets.

    The deduplicated id lists define the in-batch pools for the contrastive
    terms.
    """

    users: np.ndarray
    pos: np.ndarray
    neg: np.ndarray
    users_dedup: np.ndarray
    bundles_dedup: np.ndarray

    @property
    def size(self) -> int:
        return self.users.shape[0]


def make_batch(users, pos, neg) -> Batch:
    users = np.asarray(users, dtype=np.int64)
    pos = np.asarray(pos, dtype=np.int64)
    neg = np.asarray(neg, dtype=np.int64)
    if not (users.shape == pos.shape == neg.shape) or users.ndim != 1 or users.size == 0:
        raise ContractError("batch arrays must be equal-length non-empty 1-d arrays")
    return Batch(
        users=users,
        pos=pos,
        neg=neg,
        users_dedup=np.unique(users),
        bundles_dedup=np.unique(np.concatenate([pos, neg])),
    )


@dataclass(frozen=True)
class LossWeights:
    """Hyperparameters of the joint objective."""

    lambda1: float
    lambda2: float
    tau: float


@dataclass(frozen=True)
class LossBreakdown:
    bpr: float
    contrast_u: float
    contrast_b: float
    l2: float
    total: float
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ForwardContext:
    """Everything held fixed while differentiating one batch.

    The graphs may be dropout-thinned copies; the composer inputs reflect
    the chosen augmentation.  ``contrast_pool`` selects the negative pool
    for the contrastive terms: the deduplicated in-batch entities
    ("batch", default) or every entity ("full").
    """

    ub_graph: BipartiteGraph
    ui_graph: BipartiteGraph
    composer_inputs: ComposerInputs
    layers: int
    use_mediated: bool = True
    contrast_pool: str = "batch"


@dataclass
class Gradients:
    """Per-table gradients, mirroring ParameterSet.

    ``user_item_level`` is None when the user embedding is shared; its
    contribution is folded into ``user_bundle_level``.
    """

    user_bundle_level: np.ndarray
    bundle_bundle_level: np.ndarray
    item_item_level: np.ndarray
    user_item_level: np.ndarray | None

    def tables(self):
        yield "user_bundle_level", self.user_bundle_level
        yield "bundle_bundle_level", self.bundle_bundle_level
        yield "item_item_level", self.item_item_level
        if self.user_item_level is not None:
            yield "user_item_level", self.user_item_level


def bpr_loss(pos_scores: np.ndarray, neg_scores: np.ndarray) -> float:
    """Mean -ln sigmoid(pos - neg), computed as softplus(neg - pos)."""
    pos_scores = np.asarray(pos_scores, dtype=np.float64)
    neg_scores = np.asarray(neg_scores, dtype=np.float64)
    if pos_scores.shape != neg_scores.shape:
        raise ContractError("positive and negative score sequences differ in length")
    return float(np.mean(np.logaddexp(0.0, neg_scores - pos_scores)))


def _normalize_rows(rows: np.ndarray):
    """Rows scaled to unit norm with a 1e-12 floor for degenerate rows."""
    norms = np.linalg.norm(rows, axis=1)
    floored = norms < NORM_FLOOR
    safe = np.where(floored, NORM_FLOOR, norms)
    return rows / safe[:, None], safe, floored


def _infonce(anchors: np.ndarray, pool: np.ndarray, pos_idx: np.ndarray, tau: float):
    """InfoNCE over cosine similarities; returns loss, gradients, diagnostics.

    Gradients are with respect to the raw (unnormalized) anchor and pool
    rows.  pos_idx[j] is the pool row that is anchor j's positive.
    """
    if tau <= 0:
        raise ContractError(f"temperature must be positive, got {tau}")
    if anchors.shape[0] == 0 or pool.shape[0] == 0:
        raise ContractError("contrastive terms need at least one anchor and one pool row")
    n = anchors.shape[0]
    a_hat, a_norm, a_floored = _normalize_rows(anchors)
    p_hat, p_norm, p_floored = _normalize_rows(pool)
    logits = (a_hat @ p_hat.T) / tau
    row_max = logits.max(axis=1, keepdims=True)
    shifted = np.exp(logits - row_max)
    denom = shifted.sum(axis=1, keepdims=True)
    log_softmax_pos = (
        logits[np.arange(n), pos_idx] - row_max[:, 0] - np.log(denom[:, 0])
    )
    loss = float(-np.mean(log_softmax_pos))

    grad_logits = shifted / denom
    grad_logits[np.arange(n), pos_idx] -= 1.0
    grad_logits /= n

    grad_a_hat = (grad_logits @ p_hat) / tau
    grad_p_hat = (grad_logits.T @ a_hat) / tau

    def through_norm(grad_hat, hat, norm, floored):
        radial = np.einsum("ij,ij->i", grad_hat, hat)
        grad = (grad_hat - radial[:, None] * hat) / norm[:, None]
        if floored.any():
            grad[floored] = grad_hat[floored] / NORM_FLOOR
        return grad

    grad_anchors = through_norm(grad_a_hat, a_hat, a_norm, a_floored)
    grad_pool = through_norm(grad_p_hat, p_hat, p_norm, p_floored)
    floored_rows = int(a_floored.sum() + p_floored.sum())
    return loss, grad_anchors, grad_pool, floored_rows


def contrastive_loss(view_a: np.ndarray, view_b: np.ndarray, tau: float) -> float:
    """Mean InfoNCE over a batch where row j of each view is a positive pair."""
    view_a = np.asarray(view_a, dtype=np.float64)
    view_b = np.asarray(view_b, dtype=np.float64)
    if view_a.shape != view_b.shape or view_a.ndim != 2 or view_a.shape[0] < 1:
        raise ContractError("views must be equal-shape 2-d arrays with >= 1 row")
    loss, _, _, _ = _infonce(view_a, view_b, np.arange(view_a.shape[0]), tau)
    return loss


def _contrast_term(anchor_rows, pool_table, ids, tau, pool_mode):
    """One cross-view term: anchors are the batch entities' bundle-level rows."""
    if pool_mode == "batch":
        pool = pool_table[ids]
        pos_idx = np.arange(ids.shape[0])
    elif pool_mode == "full":
        pool = pool_table
        pos_idx = ids
    else:
        raise ContractError(f"unknown contrast pool {pool_mode!r}")
    return _infonce(anchor_rows[ids], pool, pos_idx, tau)


def loss_and_gradients(
    params: ParameterSet,
    batch: Batch,
    weights: LossWeights,
    ctx: ForwardContext,
) -> tuple[LossBreakdown, Gradients]:
    """Evaluate the joint loss and its exact gradients for one batch.

    The forward context (graphs and composer inputs) is treated as a
    constant; only the parameter tables are differentiated.
    """
    lam1, lam2, tau = weights.lambda1, weights.lambda2, weights.tau

    ub = propagate(ctx.ub_graph, params.user_bundle_level, params.bundle_bundle_level, ctx.layers)
    ui = propagate(ctx.ui_graph, params.user_item_table, params.item_item_level, ctx.layers)
    e_u_bl, e_b_bl = ub.left_fused, ub.right_fused
    e_u_il, e_i_il = ui.left_fused, ui.right_fused
    ci = ctx.composer_inputs.with_item_embeddings(e_i_il)
    e_b_il = composer_mod.compose_affiliation(ci)
    if ctx.use_mediated:
        e_b_il = e_b_il + composer_mod.compose_mediated(ci)

    u, p, n = batch.users, batch.pos, batch.neg
    margins = (
        np.einsum("ij,ij->i", e_u_bl[u], e_b_bl[p] - e_b_bl[n])
        + np.einsum("ij,ij->i", e_u_il[u], e_b_il[p] - e_b_il[n])
    )
    bpr = float(np.mean(np.logaddexp(0.0, -margins)))

    cu, grad_cu_anchor, grad_cu_pool, floor_u = _contrast_term(
        e_u_bl, e_u_il, batch.users_dedup, tau, ctx.contrast_pool
    )
    cb, grad_cb_anchor, grad_cb_pool, floor_b = _contrast_term(
        e_b_bl, e_b_il, batch.bundles_dedup, tau, ctx.contrast_pool
    )

    l2 = float(sum(np.sum(np.square(t)) for _, t in params.tables()))
    total = bpr + lam1 * (cb + cu) + lam2 * l2
    breakdown = LossBreakdown(
        bpr=bpr,
        contrast_u=cu,
        contrast_b=cb,
        l2=l2,
        total=total,
        diagnostics={"norm_floored_rows": floor_u + floor_b},
    )
    if not np.isfinite(total):
        bad = [
            name
            for name, val in [("bpr", bpr), ("contrast_u", cu), ("contrast_b", cb), ("l2", l2)]
            if not np.isfinite(val)
        ]
        raise NumericalError(f"non-finite loss component(s): {', '.join(bad)}")

    # Gradients wrt the fused view tables.
    g_u_bl = np.zeros_like(e_u_bl)
    g_b_bl = np.zeros_like(e_b_bl)
    g_u_il = np.zeros_like(e_u_il)
    g_b_il = np.zeros_like(e_b_il)

    dmargin = -expit(-margins) / batch.size
    np.add.at(g_u_bl, u, dmargin[:, None] * (e_b_bl[p] - e_b_bl[n]))
    np.add.at(g_b_bl, p, dmargin[:, None] * e_u_bl[u])
    np.add.at(g_b_bl, n, -dmargin[:, None] * e_u_bl[u])
    np.add.at(g_u_il, u, dmargin[:, None] * (e_b_il[p] - e_b_il[n]))
    np.add.at(g_b_il, p, dmargin[:, None] * e_u_il[u])
    np.add.at(g_b_il, n, -dmargin[:, None] * e_u_il[u])

    np.add.at(g_u_bl, batch.users_dedup, lam1 * grad_cu_anchor)
    np.add.at(g_b_bl, batch.bundles_dedup, lam1 * grad_cb_anchor)
    if ctx.contrast_pool == "batch":
        np.add.at(g_u_il, batch.users_dedup, lam1 * grad_cu_pool)
        np.add.at(g_b_il, batch.bundles_dedup, lam1 * grad_cb_pool)
    else:
        g_u_il += lam1 * grad_cu_pool
        g_b_il += lam1 * grad_cb_pool

    # Composer backward: both pathways read the same item table.
    g_i_il = composer_mod.backprop_affiliation(ci, g_b_il)
    if ctx.use_mediated:
        g_i_il += composer_mod.backprop_mediated(ci, g_b_il)

    # Propagation backward: the stacked operator is symmetric, so applying
    # the same propagation to the fused-output gradients yields the
    # layer-0 (parameter table) gradients.
    back_ub = propagate(ctx.ub_graph, g_u_bl, g_b_bl, ctx.layers)
    back_ui = propagate(ctx.ui_graph, g_u_il, g_i_il, ctx.layers)
    d_user_bundle = back_ub.left_fused
    d_bundle_bundle = back_ub.right_fused
    d_user_item = back_ui.left_fused
    d_item_item = back_ui.right_fused

    d_user_bundle += 2.0 * lam2 * params.user_bundle_level
    d_bundle_bundle += 2.0 * lam2 * params.bundle_bundle_level
    d_item_item += 2.0 * lam2 * params.item_item_level
    if params.shared_user_embedding:
        d_user_bundle += d_user_item
        grads = Gradients(d_user_bundle, d_bundle_bundle, d_item_item, None)
    else:
        d_user_item += 2.0 * lam2 * params.user_item_level
        grads = Gradients(d_user_bundle, d_bundle_bundle, d_item_item, d_user_item)

    for name, table in grads.tables():
        if not np.all(np.isfinite(table)):
            raise NumericalError(f"non-finite gradient in {name}")
    return breakdown, grads
