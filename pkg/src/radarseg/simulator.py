"""Deterministic synthetic traffic scenes with per-point ground truth.

Each tracked object moves back and forth along a straight path inside the
detection area and emits a Poisson number of points per frame.  A point is
drawn directly in feature space (Cartesian offset from the centroid,
relative Doppler, RCS) and then converted to the radar's polar report, so
running the feature extractor on a generated point recovers the draw
exactly.  Untracked clutter points are scattered uniformly over the area.

The class statistics shipped in :func:`default_scene` are editable
defaults, not measured values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from .exceptions import SceneConfigError
from .features import Frame, RadarPoint, TrackCentroid
from .labeling import ClassLabel

MAX_RANGE = 15.0
MAX_CROSS_RANGE = 9.0


class Resolutions(NamedTuple):
    range: float = 0.09
    doppler: float = 0.8
    azimuth: float = 15.0
    elevation: float = 28.0


@dataclass(frozen=True)
class ObjectSpec:
    """A moving object and the distribution of the points it reflects.

    ``extent`` holds three-sigma half sizes (m) of the point scatter around
    the centroid along x, y, z.  The centroid moves from ``start`` with
    ``velocity`` for ``transit_time`` seconds, then returns; it is present
    for a ``duty_cycle`` fraction of the time (one round trip, then absent).
    """

    label: ClassLabel
    extent: tuple
    doppler_std: float
    rcs_mean: float
    rcs_std: float
    points_per_frame: float
    start: tuple
    velocity: tuple
    transit_time: float
    duty_cycle: float = 1.0
    phase: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "label", ClassLabel(self.label))
        for name in ("extent", "start", "velocity"):
            value = tuple(float(v) for v in getattr(self, name))
            if len(value) != 3:
                raise SceneConfigError(f"{name} must have three components")
            object.__setattr__(self, name, value)
        if min(self.extent) <= 0 or self.doppler_std <= 0 or self.rcs_std <= 0:
            raise SceneConfigError("extent, doppler_std and rcs_std must be positive")
        if self.points_per_frame < 0:
            raise SceneConfigError("points_per_frame must be non-negative")
        if self.transit_time <= 0:
            raise SceneConfigError("transit_time must be positive")
        if not 0 < self.duty_cycle <= 1:
            raise SceneConfigError("duty_cycle must lie in (0, 1]")
        for p in (self.start, self.end):
            x, y, z = p
            if math.hypot(x, y, z) > MAX_RANGE or abs(x) > MAX_CROSS_RANGE or y <= 0:
                raise SceneConfigError(
                    f"{self.label.name.lower()} trajectory leaves the detection area at "
                    f"({x:.2f}, {y:.2f}, {z:.2f}); range <= {MAX_RANGE} m, "
                    f"|cross-range| <= {MAX_CROSS_RANGE} m, y > 0 required"
                )

    @property
    def end(self):
        return tuple(s + v * self.transit_time for s, v in zip(self.start, self.velocity))

    @property
    def offset_std(self):
        return np.array(self.extent) / 3.0

    def feature_mean(self):
        return np.array([0.0, 0.0, 0.0, 0.0, self.rcs_mean])

    def feature_cov(self):
        return np.diag(np.r_[self.offset_std ** 2, self.doppler_std ** 2, self.rcs_std ** 2])

    def state_at(self, t):
        """``(position, velocity)`` at time ``t``, or ``None`` when absent."""
        round_trip = 2.0 * self.transit_time
        cycle = round_trip / self.duty_cycle
        tau = (t + self.phase) % cycle
        if tau >= round_trip:
            return None
        v = np.array(self.velocity)
        if tau <= self.transit_time:
            return np.array(self.start) + v * tau, v
        return np.array(self.start) + v * (round_trip - tau), -v


@dataclass(frozen=True)
class SceneConfig:
    objects: tuple = ()
    clutter_rate: float = 8.0
    clutter_rcs_mean: float = 5.0
    clutter_rcs_std: float = 6.0
    clutter_doppler_std: float = 0.15
    # clutter is scattered uniformly in (range, azimuth, elevation) over these boxes
    clutter_range: tuple = (1.0, MAX_RANGE)
    clutter_azimuth: tuple = (-35.0, 35.0)
    clutter_elevation: tuple = (-20.0, 5.0)
    n_frames: int = 100
    frame_period: float = 0.1
    seed: int = 0
    noise_db: float = 10.0
    quantize: bool = False
    resolutions: Resolutions = field(default_factory=Resolutions)

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "resolutions", Resolutions(*self.resolutions))
        if self.n_frames < 1:
            raise SceneConfigError("n_frames must be >= 1")
        if self.frame_period <= 0:
            raise SceneConfigError("frame_period must be positive")
        if self.clutter_rate < 0 or self.clutter_rcs_std <= 0 or self.clutter_doppler_std <= 0:
            raise SceneConfigError("invalid clutter statistics")
        if self.quantize and min(self.resolutions) <= 0:
            raise SceneConfigError("resolutions must be positive when quantization is on")
        lo, hi = self.clutter_range
        if not 0 < lo < hi <= MAX_RANGE:
            raise SceneConfigError("clutter_range must satisfy 0 < lo < hi <= 15")
        if hi * math.sin(math.radians(max(map(abs, self.clutter_azimuth)))) > MAX_CROSS_RANGE:
            raise SceneConfigError("clutter azimuth span exceeds the cross-range limit")
        if not 0 <= self.seed < 2**64:
            raise SceneConfigError("seed must be a 64-bit unsigned integer")

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "objects"}
        d["resolutions"] = list(self.resolutions)
        d["clutter_range"] = list(self.clutter_range)
        d["clutter_azimuth"] = list(self.clutter_azimuth)
        d["clutter_elevation"] = list(self.clutter_elevation)
        d["objects"] = [
            {**{k: getattr(o, k) for k in o.__dataclass_fields__}, "label": int(o.label)}
            for o in self.objects
        ]
        for o in d["objects"]:
            for k in ("extent", "start", "velocity"):
                o[k] = list(o[k])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        objects = tuple(ObjectSpec(**o) for o in d.pop("objects", ()))
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SceneConfigError(f"unknown scene config keys: {sorted(unknown)}")
        for k in ("clutter_range", "clutter_azimuth", "clutter_elevation"):
            if k in d:
                d[k] = tuple(d[k])
        if "resolutions" in d:
            d["resolutions"] = Resolutions(*d["resolutions"])
        return cls(objects=objects, **d)


@dataclass
class SimulatedScene:
    config: SceneConfig
    frames: list
    truth: list  # per frame, int64 array of class codes aligned with frame.points

    def all_truth(self):
        if not self.truth:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(self.truth)


def default_pedestrian(cross_range=3.5):
    return ObjectSpec(
        label=ClassLabel.PEDESTRIAN,
        extent=(0.6, 0.6, 0.9),
        doppler_std=0.6,
        rcs_mean=-2.0,
        rcs_std=3.0,
        points_per_frame=10.0,
        start=(cross_range, 3.0, -2.0),
        velocity=(0.0, 1.3, 0.0),
        transit_time=8.0,
    )


def default_car(cross_range=-4.0, duty_cycle=0.4):
    return ObjectSpec(
        label=ClassLabel.CAR,
        extent=(1.2, 2.7, 0.9),
        doppler_std=0.25,
        rcs_mean=10.0,
        rcs_std=4.0,
        points_per_frame=20.0,
        start=(cross_range, 13.0, -2.2),
        velocity=(0.0, -5.0, 0.0),
        transit_time=2.0,
        duty_cycle=duty_cycle,
    )


def default_scene(n_frames=100, seed=0, **overrides):
    """Pedestrian walking left of the line of sight, car driving on the right."""
    return SceneConfig(
        objects=(default_pedestrian(), default_car()),
        n_frames=n_frames,
        seed=seed,
        **overrides,
    )


def paper_scale_configs(seed=0):
    """``(train, test)`` configs at the field recording's scale (8000 / 1200 frames)."""
    return default_scene(8000, seed=seed), default_scene(1200, seed=seed + 1)


def _round_to(value, step, mode):
    q = value / step
    return (math.floor(q) if mode == "floor" else round(q)) * step


def quantize_measurement(point, resolutions, mode="nearest"):
    """Snap range, Doppler and both angles to multiples of the sensor resolutions.

    ``mode="nearest"`` rounds to the closest multiple; ``mode="floor"``
    truncates to the bin below, as a bin-index readout would.
    """
    res = Resolutions(*resolutions)
    if min(res) <= 0:
        raise ValueError("resolutions must be positive")
    if mode not in ("nearest", "floor"):
        raise ValueError(f"unknown quantization mode {mode!r}")
    r = _round_to(point.r, res.range, mode)
    if r <= 0:
        r = res.range
    return replace(
        point,
        r=r,
        vD=_round_to(point.vD, res.doppler, mode),
        theta_az=_round_to(point.theta_az, res.azimuth, mode),
        theta_el=_round_to(point.theta_el, res.elevation, mode),
    )


def sample_features(mean, cov, n, seed):
    """``n`` i.i.d. draws from N(mean, cov), one row per draw."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if n < 1:
        raise ValueError("n must be >= 1")
    if cov.shape != (mean.size, mean.size) or not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
        raise ValueError("covariance must be a symmetric matrix matching the mean")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance is not positive definite") from exc
    z = np.random.default_rng(seed).standard_normal((n, mean.size))
    return mean + z @ chol.T


def _polar(pos):
    """Cartesian (n, 3) -> range, azimuth (deg), elevation (deg), unit vectors."""
    r = np.linalg.norm(pos, axis=1)
    az = np.degrees(np.arctan2(pos[:, 0], pos[:, 1]))
    el = np.degrees(np.arcsin(np.clip(pos[:, 2] / r, -1.0, 1.0)))
    return r, az, el


def _unit(az_deg, el_deg):
    az = np.radians(az_deg)
    el = np.radians(el_deg)
    return np.column_stack([np.cos(el) * np.sin(az), np.cos(el) * np.cos(az), np.sin(el)])


def _make_points(cfg, r, az, el, vD, sigma, track_id):
    pts = []
    snr = sigma - 40.0 * np.log10(r) - cfg.noise_db
    for i in range(r.size):
        p = RadarPoint(float(r[i]), float(az[i]), float(el[i]), float(vD[i]),
                       float(snr[i]), cfg.noise_db, track_id)
        if cfg.quantize:
            p = quantize_measurement(p, cfg.resolutions)
        pts.append(p)
    return pts


def simulate_scene(config, return_features=False):
    """Generate ``config.n_frames`` frames and their per-point truth.

    With ``return_features=True`` also returns the (N, 5) array of drawn
    feature vectors in point order (the values the extractor should recover
    when quantization is off).
    """
    rng = np.random.default_rng(config.seed)
    frames, truth, drawn = [], [], []
    for frame_id in range(config.n_frames):
        t = frame_id * config.frame_period
        points, centroids, labels = [], [], []
        for track_id, obj in enumerate(config.objects):
            state = obj.state_at(t)
            if state is None:
                continue
            pos, vel = state
            n = rng.poisson(obj.points_per_frame)
            offsets = rng.standard_normal((n, 3)) * obj.offset_std
            dD = rng.normal(0.0, obj.doppler_std, n)
            sigma = rng.normal(obj.rcs_mean, obj.rcs_std, n)
            p = pos + offsets
            keep = p[:, 1] > 0  # outside the forward field of view
            p, offsets, dD, sigma = p[keep], offsets[keep], dD[keep], sigma[keep]
            r, az, el = _polar(p)
            vD = dD + _unit(az, el) @ vel
            centroids.append(TrackCentroid(track_id, *map(float, pos), *map(float, vel)))
            points.extend(_make_points(config, r, az, el, vD, sigma, track_id))
            labels.extend([int(obj.label)] * r.size)
            drawn.append(np.column_stack([offsets, dD, sigma]))
        n = rng.poisson(config.clutter_rate)
        r = rng.uniform(*config.clutter_range, n)
        az = rng.uniform(*config.clutter_azimuth, n)
        el = rng.uniform(*config.clutter_elevation, n)
        vD = rng.normal(0.0, config.clutter_doppler_std, n)
        sigma = rng.normal(config.clutter_rcs_mean, config.clutter_rcs_std, n)
        points.extend(_make_points(config, r, az, el, vD, sigma, None))
        labels.extend([int(ClassLabel.CLUTTER)] * n)
        drawn.append(np.column_stack([np.zeros((n, 3)), vD, sigma]))
        frames.append(Frame(frame_id, points, centroids, timestamp=round(t, 9)))
        truth.append(np.array(labels, dtype=np.int64))
    scene = SimulatedScene(config, frames, truth)
    if return_features:
        return scene, np.concatenate(drawn) if drawn else np.empty((0, 5))
    return scene


__all__ = [
    "ObjectSpec",
    "Resolutions",
    "SceneConfig",
    "SimulatedScene",
    "default_scene",
    "paper_scale_configs",
    "quantize_measurement",
    "sample_features",
    "simulate_scene",
]
