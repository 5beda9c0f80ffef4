"""Point-wise segmentation of mmWave radar point clouds with a Gaussian mixture."""

__version__ = "0.1.0"

from .features import (  # noqa: E402
    FeatureVector,
    Frame,
    RadarFeatureExtractor,
    RadarPoint,
    TrackCentroid,
    extract_features,
    extract_frame_features,
    frames_to_features,
    to_cartesian,
)
from .gmm import FitConfig, FitReport, GaussianMixtureEM, GmmModel, GmmParams, fit_em  # noqa: E402
from .labeling import ClassLabel, associate_labels, ground_truth_by_side  # noqa: E402
from .metrics import class_metrics, confusion_matrix, pr_curve  # noqa: E402

__all__ = [
    "ClassLabel",
    "FeatureVector",
    "FitConfig",
    "FitReport",
    "Frame",
    "GaussianMixtureEM",
    "GmmModel",
    "GmmParams",
    "RadarFeatureExtractor",
    "RadarPoint",
    "TrackCentroid",
    "associate_labels",
    "class_metrics",
    "confusion_matrix",
    "extract_features",
    "extract_frame_features",
    "fit_em",
    "frames_to_features",
    "ground_truth_by_side",
    "pr_curve",
    "to_cartesian",
]
