"""Dependency-thread extraction and thread-aware response selection."""

from .corpus import Dialogue, Tokenizer, Turn, build_vocab, load_corpus
from .dependency import DependencyEdge, DependencyForest, chain_parser, load_edges, validate_forest
from .encoder import EncoderConfig
from .evaluation import evaluate, hits_at_k, mrr, rank_candidates
from .extraction import ExtractionConfig, ThreadSet, build_threads, dist_seg, extract_threads, full_history, thread_stats
from .model import ThreadEncoderModel, load_model, save_model
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Dialogue", "Tokenizer", "Turn", "build_vocab", "load_corpus",
    "DependencyEdge", "DependencyForest", "chain_parser", "load_edges", "validate_forest",
    "EncoderConfig", "evaluate", "hits_at_k", "mrr", "rank_candidates",
    "ExtractionConfig", "ThreadSet", "build_threads", "dist_seg", "extract_threads", "full_history", "thread_stats",
    "ThreadEncoderModel", "load_model", "save_model", "TrainConfig", "train",
]
