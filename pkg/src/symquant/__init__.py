"""Class-prevalence estimation with histogram-layer set networks and classical
aggregative quantifiers."""
from .core import (BagDataset, LabeledDataset, absolute_error, empirical_prevalence,
                   hellinger_distance, make_prevalence, relative_absolute_error)

__version__ = "0.1.0"

__all__ = [
    "BagDataset", "LabeledDataset", "absolute_error", "empirical_prevalence",
    "hellinger_distance", "make_prevalence", "relative_absolute_error",
]
