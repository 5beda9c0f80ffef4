"""Ground-truth rules and cluster-to-class association."""

from __future__ import annotations

import itertools
from enum import IntEnum

import numpy as np

from .exceptions import UnsupportedKError

MAX_ASSOCIATION_K = 8


class ClassLabel(IntEnum):
    CLUTTER = 0
    PEDESTRIAN = 1
    CAR = 2


CLASS_NAMES = {int(c): c.name.lower() for c in ClassLabel}

# index of each axis in a centroid position tuple
_AXES = {"x": 0, "y": 1, "z": 2}


def ground_truth_by_side(frame, axis="x"):
    """Label every point of ``frame`` by which side of the line of sight its track is on.

    Untracked points are clutter; a tracked point whose centroid coordinate
    along ``axis`` is positive is a pedestrian, otherwise a car.  The default
    splits on cross-range (``x``), since ``y`` is the boresight axis here.
    """
    if axis not in _AXES:
        raise ValueError(f"axis must be one of {sorted(_AXES)}, got {axis!r}")
    i = _AXES[axis]
    labels = []
    for point in frame.points:
        c = frame.centroid_for(point)
        if c is None:
            labels.append(ClassLabel.CLUTTER)
        elif c.position[i] > 0:
            labels.append(ClassLabel.PEDESTRIAN)
        else:
            labels.append(ClassLabel.CAR)
    return labels


def contingency(clusters, truth, K):
    """K x K counts, rows = cluster index, columns = truth class."""
    clusters = np.asarray(clusters, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if clusters.shape != truth.shape:
        raise ValueError(
            f"length mismatch: {clusters.shape[0]} predictions vs {truth.shape[0]} labels"
        )
    for name, arr in (("cluster", clusters), ("class", truth)):
        if arr.size and (arr.min() < 0 or arr.max() >= K):
            raise ValueError(f"{name} codes must lie in [0, {K})")
    table = np.zeros((K, K), dtype=np.int64)
    np.add.at(table, (clusters, truth), 1)
    return table


def associate_labels(clusters, truth, K):
    """Cluster -> class bijection maximizing agreement with ``truth``.

    Every one of the K! permutations is scored by the trace of the mapped
    contingency table; ties keep the lexicographically smallest permutation.
    Returns a dict ``{cluster: class_code}``.
    """
    if K > MAX_ASSOCIATION_K:
        raise UnsupportedKError(
            f"exhaustive association supports K <= {MAX_ASSOCIATION_K}, got {K}"
        )
    if K < 1:
        raise ValueError("K must be >= 1")
    table = contingency(clusters, truth, K)
    rows = np.arange(K)
    best, best_score = None, -1
    for perm in itertools.permutations(range(K)):
        score = int(table[rows, perm].sum())
        if score > best_score:
            best, best_score = perm, score
    return {k: int(c) for k, c in enumerate(best)}


def apply_label_map(clusters, label_map):
    lut = np.array([label_map[k] for k in range(len(label_map))], dtype=np.int64)
    return lut[np.asarray(clusters, dtype=np.int64)]
