"""Heterogeneous information network embeddings with hierarchical
path-instance and meta-path attention."""

from .graph import GraphFormatError, TargetSet, TypedGraph, load_graph, select_target
from .metapath import MetaPath, commuting_matrix, normalize_rows, parse_metapath
from .train import TrainConfig, TrainedModel, train
from .evaluation import attention_report, evaluate_model, export_embeddings, micro_macro_f1
from .checkpoint import load_model, save_model
from .synth import PathPlant, SynthConfig, generate_planted_hin

__version__ = "0.1.0"
