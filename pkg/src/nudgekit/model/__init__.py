from .indexing import GraphIndex, build_index
from .network import (
    RankResult,
    ScoredPair,
    attention_weights,
    gat_attention_weights,
    predict,
    propagate,
    rank_candidates,
)
from .params import (
    CONCAT_LINEAR,
    GRAPH_ATTENTION,
    KNOWLEDGE_AWARE,
    SCOPE_ALL,
    SCOPE_PER_RELATION,
    SUM_LINEAR,
    HyperParams,
    ModelError,
    ModelState,
    init_embeddings,
    load_checkpoint,
    save_checkpoint,
    states_equal,
    warm_start,
    xavier_bound,
)
from .training import TrainingError, TrainingTelemetry, loss_and_gradients, train

__all__ = [
    "GraphIndex",
    "build_index",
    "RankResult",
    "ScoredPair",
    "attention_weights",
    "gat_attention_weights",
    "predict",
    "propagate",
    "rank_candidates",
    "CONCAT_LINEAR",
    "GRAPH_ATTENTION",
    "KNOWLEDGE_AWARE",
    "SCOPE_ALL",
    "SCOPE_PER_RELATION",
    "SUM_LINEAR",
    "HyperParams",
    "ModelError",
    "ModelState",
    "init_embeddings",
    "load_checkpoint",
    "save_checkpoint",
    "states_equal",
    "warm_start",
    "xavier_bound",
    "TrainingError",
    "TrainingTelemetry",
    "loss_and_gradients",
    "train",
]
