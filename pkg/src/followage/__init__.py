"""Age inference for accounts of a bipartite follow graph with a smoothed Naive Bayes model."""

__version__ = "0.1.0"

from .taxonomy import DEFAULT_TAXONOMY, AgeTaxonomy, default_prior, load_taxonomy  # noqa: E402
from .ingestion import DataError, FollowGraph, LabeledAccount, read_edges, read_labels  # noqa: E402
from .model import Hyperparameters, TrainedModel, load_model, predict, predict_stream, save_model, train  # noqa: E402
from .extraction import extract_age, load_rules  # noqa: E402
from .cleaning import clean_labels, loo_influence, mad_flag  # noqa: E402
from .simulation import SimConfig, simulate  # noqa: E402

__all__ = [
    "DEFAULT_TAXONOMY", "AgeTaxonomy", "default_prior", "load_taxonomy",
    "DataError", "FollowGraph", "LabeledAccount", "read_edges", "read_labels",
    "Hyperparameters", "TrainedModel", "load_model", "predict", "predict_stream", "save_model", "train",
    "extract_age", "load_rules", "clean_labels", "loo_influence", "mad_flag", "SimConfig", "simulate",
]
