"""Representation learning for treatment-effect estimation with infomax and domain-independence terms."""

from idrl.data import Dataset, SplitSpec, split
from idrl.metrics import MetricsReport, evaluate
from idrl.model import FittedIdrl, IdrlConfig, estimate_effects, fit
from idrl.synthetic import SyntheticSpec, amplify_bias, generate

__all__ = [
    "Dataset", "SplitSpec", "split", "MetricsReport", "evaluate", "FittedIdrl", "IdrlConfig",
    "estimate_effects", "fit", "SyntheticSpec", "amplify_bias", "generate",
]
__version__ = "0.1.0"
