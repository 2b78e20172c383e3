# Temporal N-tuple Reasoner
# Explainable multi-hop reasoning over n-tuple temporal knowledge graphs

__version__ = "1.0.0"

from .dataset import Dataset, load_dataset
from .models import Fact, Query, RunConfig, SynthConfig
from .policy import MixturePolicy
from .training import train
from .inference import beam_search, evaluate, explain

__all__ = [
    "Dataset",
    "load_dataset",
    "Fact",
    "Query",
    "RunConfig",
    "SynthConfig",
    "MixturePolicy",
    "train",
    "beam_search",
    "evaluate",
    "explain",
]
