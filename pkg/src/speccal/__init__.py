"""speccal: confidence-calibration benchmark for spectrum classifiers.

Generates synthetic range-azimuth spectra for seven object classes plus an
out-of-distribution set, trains a small CNN across seeds, fits post-hoc
calibrators (temperature scaling, MI-maximizing binning, latent-GP scaling),
and evaluates calibration under domain shift, graded corruptions, and OOD
inputs. The `speccal` CLI drives the full pipeline from a JSON config.
"""

from .backend import USE_NUMBA, backend_name
from .core import (
    ENV1_TEST,
    ENV1_TRAIN,
    ENV1_VALID,
    ENV2_TEST,
    OOD,
    OOD_LABEL,
    LabeledDataset,
    LogitRecord,
    softmax,
    split_disjointness_check,
)

__all__ = [
    "USE_NUMBA",
    "backend_name",
    "ENV1_TRAIN",
    "ENV1_VALID",
    "ENV1_TEST",
    "ENV2_TEST",
    "OOD",
    "OOD_LABEL",
    "LabeledDataset",
    "LogitRecord",
    "softmax",
    "split_disjointness_check",
]

__version__ = "0.1.0"
