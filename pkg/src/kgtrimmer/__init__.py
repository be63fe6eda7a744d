"""Knowledge-graph pruning for recommendation.

Entities are scored from two views (user attention and a learned mask), the
scores weight message passing in a KG-aware GNN trained with BPR, and the
per-epoch scores are aggregated into a binary mask over triples.
"""
from .errors import (AlignmentError, ConfigError, DataFormatError, EmptyDatasetError,
                     KGTrimmerError, TrainingDivergedError, ValidationError)
from .evaluator import DualViewEvaluator, ParameterStore, clipped_cosine, triplet_scores
from .gnn import ImportanceAwareGNN, bpr_loss, predict
from .graph_core import (CollaborativeGraph, InteractionGraph, KnowledgeGraph, build_ckg,
                         load_dataset, load_interactions, load_triples, stats)
from .metrics import (EvalReport, evaluate_all_ranking, evaluate_params, norm_baseline,
                      pop_baseline, random_baseline, retrain_and_compare)
from .pruner import aggregate_masks, apply_mask, binarize_percentile, binarize_threshold
from .qmatrix import UserEntityMatrix, build_user_entity_matrix
from .trainer import TrainConfig, adam_step, train

__version__ = "0.1.0"
