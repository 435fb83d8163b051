"""Bundle recommendation with two-level graph propagation, enhanced
item-level bundle composition, pseudo-interaction augmentation, and joint
ranking + cross-view contrastive training."""

from .augmentor import (
    AugmentedNeighbors,
    PretrainConfig,
    UIPredictor,
    generate_topk,
    observed_neighbors,
    pretrain_predictor,
    read_augmented,
    write_augmented,
)
from .composer import ComposerInputs, compose, compose_affiliation, compose_mediated
from .dataset import InteractionDataset, load_dataset, neighbor_sets, write_dataset
from .errors import ContractError, EbrecError, IngestionError, NumericalError
from .evaluation import RankingResult, ndcg_at_k, rank_all, recall_at_k
from .graph import BipartiteGraph, PropagationResult, build_graph, edge_dropout, propagate
from .model import (
    ParameterSet,
    ViewEmbeddings,
    forward,
    init_parameters,
    load_checkpoint,
    save_checkpoint,
    score,
    score_users,
)
from .objective import (
    Batch,
    ForwardContext,
    LossBreakdown,
    LossWeights,
    bpr_loss,
    contrastive_loss,
    loss_and_gradients,
    make_batch,
)
from .trainer import TrainConfig, TrainReport, adaptive_update, train

__version__ = "0.1.0"
