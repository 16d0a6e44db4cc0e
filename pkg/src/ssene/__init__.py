"""Negation triplet extraction with dependency-tree-biased attention."""

from .corpus import AnnotatedSentence, generate_synthetic, load, save
from .deptree import DepTree, tree_distances, validate_tree
from .model import ModelConfig, SSENE
from .synattn import assoc_matrix, dep_attention, matrix_variant
from .trainer import TrainConfig, Trainer, evaluate_checkpoint, run_ablation_suite, train
from .triplets import NegTriplet, evaluate, parse, serialize

__version__ = "0.1.0"

__all__ = [
    "AnnotatedSentence", "DepTree", "ModelConfig", "NegTriplet", "SSENE", "TrainConfig",
    "Trainer", "assoc_matrix", "dep_attention", "evaluate", "evaluate_checkpoint",
    "generate_synthetic", "load", "matrix_variant", "parse", "run_ablation_suite", "save",
    "serialize", "train", "tree_distances", "validate_tree",
]
