"""Knowledge-graph link prediction with NePTuNe and TuckER scoring."""

from .data import KnowledgeGraph, build_graph, load_dataset
from .evaluation import RankingReport, evaluate, rank_triple
from .kernels import BACKEND as KERNEL_BACKEND
from .model import ModelParams, init_params, score_all_tails, score_neptune, score_tucker
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "KnowledgeGraph", "build_graph", "load_dataset",
    "RankingReport", "evaluate", "rank_triple",
    "KERNEL_BACKEND",
    "ModelParams", "init_params", "score_all_tails", "score_neptune", "score_tucker",
    "TrainConfig", "load_checkpoint", "save_checkpoint", "train",
]
