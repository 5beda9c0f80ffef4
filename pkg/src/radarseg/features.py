"""Radar point/centroid data model and the per-point 5-D feature vector.

Coordinates follow the sensor frame: ``y`` is boresight (line of sight),
``x`` is cross-range and ``z`` points up.  Angles travel in degrees and are
converted to radians only for trigonometry.

A point without an associated track centroid is given a virtual centroid at
its own position with zero velocity, so its spatial deltas are zero and its
relative Doppler is the raw Doppler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .exceptions import MalformedFrameError

FEATURE_NAMES = ("dx", "dy", "dz", "dD", "sigma")
POINT_COLUMNS = ("r", "theta_az", "theta_el", "vD", "snr", "noise")
CENTROID_COLUMNS = ("pX", "pY", "pZ", "vX", "vY", "vZ")


def _check_finite(obj, names):
    for name in names:
        value = getattr(obj, name)
        if not math.isfinite(value):
            raise ValueError(f"{type(obj).__name__}.{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class RadarPoint:
    """One detected reflection as reported by the radar (polar form).

    ``track_id`` is the tracker's association for this point, or ``None``
    for a point the tracker did not attach to any object.
    """

    r: float
    theta_az: float
    theta_el: float
    vD: float
    snr: float
    noise: float
    track_id: Optional[int] = None

    def __post_init__(self):
        _check_finite(self, POINT_COLUMNS)
        if self.r <= 0:
            raise ValueError(f"range must be positive, got {self.r!r}")
        if not -90.0 <= self.theta_az <= 90.0:
            raise ValueError(f"theta_az outside [-90, 90]: {self.theta_az!r}")
        if not -90.0 <= self.theta_el <= 90.0:
            raise ValueError(f"theta_el outside [-90, 90]: {self.theta_el!r}")
        if self.track_id is not None and self.track_id < 0:
            raise ValueError(f"track_id must be non-negative, got {self.track_id!r}")


@dataclass(frozen=True)
class TrackCentroid:
    track_id: int
    pX: float
    pY: float
    pZ: float
    vX: float = 0.0
    vY: float = 0.0
    vZ: float = 0.0

    def __post_init__(self):
        _check_finite(self, CENTROID_COLUMNS)
        if self.track_id < 0:
            raise ValueError(f"track_id must be non-negative, got {self.track_id!r}")

    @property
    def position(self):
        return (self.pX, self.pY, self.pZ)

    @property
    def velocity(self):
        return (self.vX, self.vY, self.vZ)


@dataclass(frozen=True)
class Frame:
    """A single radar frame: detections plus the tracker's centroids."""

    frame_id: int
    points: tuple = ()
    centroids: tuple = ()
    timestamp: Optional[float] = None
    _by_track: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        object.__setattr__(self, "centroids", tuple(self.centroids))
        if self.frame_id < 0:
            raise MalformedFrameError(
                f"frame_id must be non-negative, got {self.frame_id}", self.frame_id
            )
        by_track = {}
        for c in self.centroids:
            if c.track_id in by_track:
                raise MalformedFrameError(
                    f"frame {self.frame_id}: duplicate track_id {c.track_id}",
                    self.frame_id,
                )
            by_track[c.track_id] = c
        object.__setattr__(self, "_by_track", by_track)
        for i, p in enumerate(self.points):
            if p.track_id is not None and p.track_id not in by_track:
                raise MalformedFrameError(
                    f"frame {self.frame_id}, point {i}: track_id {p.track_id} "
                    "has no centroid in this frame",
                    self.frame_id,
                    i,
                )

    def centroid_for(self, point: RadarPoint) -> Optional[TrackCentroid]:
        if point.track_id is None:
            return None
        return self._by_track[point.track_id]


class FeatureVector(NamedTuple):
    dx: float
    dy: float
    dz: float
    dD: float
    sigma: float


def to_cartesian(point: RadarPoint):
    """Return the ``(x, y, z)`` position of a point in meters."""
    az = math.radians(point.theta_az)
    el = math.radians(point.theta_el)
    cos_el = math.cos(el)
    return (
        point.r * cos_el * math.sin(az),
        point.r * cos_el * math.cos(az),
        point.r * math.sin(el),
    )


def extract_features(point: RadarPoint, centroid: Optional[TrackCentroid] = None) -> FeatureVector:
    az = math.radians(point.theta_az)
    el = math.radians(point.theta_el)
    # unit vector along the line of sight to the point
    ux = math.cos(el) * math.sin(az)
    uy = math.cos(el) * math.cos(az)
    uz = math.sin(el)
    sigma = 40.0 * math.log10(point.r) + point.snr + point.noise
    if centroid is None:
        return FeatureVector(0.0, 0.0, 0.0, point.vD, sigma)
    radial = ux * centroid.vX + uy * centroid.vY + uz * centroid.vZ
    return FeatureVector(
        point.r * ux - centroid.pX,
        point.r * uy - centroid.pY,
        point.r * uz - centroid.pZ,
        point.vD - radial,
        sigma,
    )


class PointFeatures(NamedTuple):
    features: FeatureVector
    point_index: int
    track_id: Optional[int]


def extract_frame_features(frame: Frame) -> list:
    """Features for every point of ``frame``, in point order."""
    out = []
    for i, point in enumerate(frame.points):
        centroid = frame.centroid_for(point)
        out.append(PointFeatures(extract_features(point, centroid), i, point.track_id))
    return out


def features_from_table(table) -> np.ndarray:
    """Vectorized feature extraction over a Table-I shaped array.

    ``table`` has 12 columns: ``POINT_COLUMNS`` followed by
    ``CENTROID_COLUMNS``.  Rows whose centroid columns are all NaN are
    untracked points.
    """
    table = np.asarray(table, dtype=float)
    if table.ndim != 2 or table.shape[1] != 12:
        raise ValueError(f"expected an (n, 12) table, got shape {table.shape}")
    if not np.isfinite(table[:, :6]).all():
        raise ValueError("point columns must be finite")
    r, az_deg, el_deg, vD, snr, noise = table[:, :6].T
    if (r <= 0).any():
        raise ValueError("range must be positive")
    cent = table[:, 6:]
    az = np.radians(az_deg)
    el = np.radians(el_deg)
    unit = np.column_stack([np.cos(el) * np.sin(az), np.cos(el) * np.cos(az), np.sin(el)])
    untracked = np.isnan(cent).all(axis=1)
    if np.isnan(cent[~untracked]).any():
        raise ValueError("centroid columns must be all-NaN or all-finite per row")
    cent = np.where(untracked[:, None], 0.0, cent)

    out = np.empty((table.shape[0], 5))
    out[:, :3] = r[:, None] * unit - cent[:, :3]
    out[:, 3] = vD - np.einsum("ij,ij->i", unit, cent[:, 3:])
    out[untracked, :3] = 0.0
    out[:, 4] = 40.0 * np.log10(r) + snr + noise
    return out


def frames_to_table(frames: Sequence[Frame]) -> np.ndarray:
    """Flatten frames into the 12-column table consumed by ``features_from_table``."""
    rows = []
    nan6 = (math.nan,) * 6
    for frame in frames:
        for p in frame.points:
            c = frame.centroid_for(p)
            cent = nan6 if c is None else (c.pX, c.pY, c.pZ, c.vX, c.vY, c.vZ)
            rows.append((p.r, p.theta_az, p.theta_el, p.vD, p.snr, p.noise) + cent)
    if not rows:
        return np.empty((0, 12))
    return np.array(rows, dtype=float)


def frames_to_features(frames: Sequence[Frame]) -> np.ndarray:
    """Pool the feature vectors of every point of every frame into one ``(N, 5)`` array."""
    return features_from_table(frames_to_table(frames))


class RadarFeatureExtractor(TransformerMixin, BaseEstimator):
    """Stateless transformer mapping Table-I rows to ``(dx, dy, dz, dD, sigma)``.

    Accepts an ``(n_samples, 12)`` array, see :func:`features_from_table`.
    Composes with :class:`sklearn.pipeline.Pipeline` in front of
    :class:`radarseg.gmm.GaussianMixtureEM`.
    """

    def fit(self, X, y=None):
        X = check_array(X, ensure_all_finite="allow-nan")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = check_array(X, ensure_all_finite="allow-nan")
        return features_from_table(X)

    def get_feature_names_out(self, input_features=None):
        return np.asarray(FEATURE_NAMES, dtype=object)
