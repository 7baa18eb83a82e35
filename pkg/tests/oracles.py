"""Independent reference implementations used to check the package.

Everything here is deliberately slow and literal: plain loops, no shared
code with the package under test.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


def finite_difference_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function at x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros(x.shape)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = f(x)
        flat[i] = keep - h
        down = f(x)
        flat[i] = keep
        gf[i] = (up - down) / (2.0 * h)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max elementwise relative difference with an absolute floor."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.abs(a) + np.abs(b), 1e-6)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def brute_chamfer(pred: np.ndarray, gt: np.ndarray) -> float:
    """Symmetric Chamfer distance, mean over both directions, by loops."""
    dists = []
    for p in pred:
        dists.append(min(float(np.linalg.norm(p - q)) for q in gt))
    for q in gt:
        dists.append(min(float(np.linalg.norm(q - p)) for p in pred))
    return float(np.mean(dists))


def brute_knn_radius(points: np.ndarray, i: int, k: int) -> float:
    """Mean distance from point i to its k nearest neighbors, by loops."""
    d = sorted(float(np.linalg.norm(points[i] - points[j])) for j in range(len(points)) if j != i)
    return float(np.mean(d[:k]))


def brute_dbscan(dist: np.ndarray, eps: float, min_pts: int) -> list[set[int]]:
    """Density-reachable clusters straight from the definition.

    Returns the partition of core-reachable points as a list of index sets;
    points not reachable from any core point are left out (noise).
    """
    n = dist.shape[0]
    core = [i for i in range(n) if int(np.sum(dist[i] <= eps)) >= min_pts]
    core_set = set(core)
    unassigned = set(core)
    clusters: list[set[int]] = []
    while unassigned:
        seed = min(unassigned)
        group = {seed}
        frontier = [seed]
        while frontier:
            i = frontier.pop()
            for j in range(n):
                if j in core_set and j not in group and dist[i, j] <= eps:
                    group.add(j)
                    frontier.append(j)
        unassigned -= group
        clusters.append(group)
    # border points: non-core within eps of some core point
    for i in range(n):
        if i in core_set:
            continue
        best = None
        for cluster in clusters:
            for j in cluster:
                if j in core_set and dist[i, j] <= eps:
                    d = dist[i, j]
                    if best is None or d < best[0]:
                        best = (d, cluster)
        if best is not None:
            best[1].add(i)
    return clusters


def brute_average_precision(
    shape_records: Sequence[tuple[list[tuple[float, float]], int]],
) -> float:
    """Pooled average precision, enumerated literally.

    shape_records holds one entry per shape: a list of (confidence, iou)
    predictions already matched one-to-one against that shape's ground
    truth parts (iou 0 for unmatched predictions), plus the ground truth
    part count. The sum runs over pairs k = 1..10, where pair k uses the
    threshold with index 11-k from the ascending grid 0.50, 0.55, .., 0.95
    and pair 11 is pinned at precision 1, recall 0.
    """
    thresholds = [0.50 + 0.05 * i for i in range(10)]  # index 1..10
    preds: list[tuple[float, float]] = []
    total_gt = 0
    for matched, n_gt in shape_records:
        preds.extend(matched)
        total_gt += n_gt
    pr: dict[int, tuple[float, float]] = {}
    for k in range(1, 11):
        thr = thresholds[(11 - k) - 1]
        tp = sum(1 for _, iou in preds if iou >= thr)
        fp = len(preds) - tp
        precision = tp / (tp + fp) if (tp + fp) > 0 else 0.0
        recall = tp / total_gt if total_gt > 0 else 0.0
        pr[k] = (precision, recall)
    pr[11] = (1.0, 0.0)
    ap = 0.0
    for k in range(1, 11):
        p_k, r_k = pr[k]
        _, r_next = pr[k + 1]
        ap += (r_k - r_next) * p_k
    return ap


def rotation_matrix(axis: np.ndarray, angle_rad: float) -> np.ndarray:
    """Rodrigues rotation matrix, written out independently."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    c = np.cos(angle_rad)
    s = np.sin(angle_rad)
    cc = 1.0 - c
    return np.array(
        [
            [c + x * x * cc, x * y * cc - z * s, x * z * cc + y * s],
            [y * x * cc + z * s, c + y * y * cc, y * z * cc - x * s],
            [z * x * cc - y * s, z * y * cc + x * s, c + z * z * cc],
        ]
    )
