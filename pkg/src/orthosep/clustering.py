"""K-means over embedding rows and conversion of cluster labels to
binary time-frequency masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError


@dataclass
class ClusterResult:
    assignments: np.ndarray  # (N,) int labels in [0, C)
    centroids: np.ndarray  # (C, K)
    inertia: float
    iterations: int


def _kmeans_pp_init(x, c, rng):
    n = x.shape[0]
    centroids = np.empty((c, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    d2 = np.sum((x - centroids[0]) ** 2, axis=1)
    for j in range(1, c):
        total = d2.sum()
        if total == 0.0:
            centroids[j] = x[rng.integers(n)]
            continue
        probs = d2 / total
        centroids[j] = x[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, np.sum((x - centroids[j]) ** 2, axis=1))
    return centroids


def _lloyd(x, centroids, max_iter, tol):
    prev_inertia = np.inf
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        d2 = np.sum((x[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        labels = np.argmin(d2, axis=1)
        inertia = float(d2[np.arange(len(x)), labels].sum())
        assert inertia <= prev_inertia + 1e-9, "k-means inertia increased"
        prev_inertia = inertia
        new_centroids = centroids.copy()
        for j in range(centroids.shape[0]):
            members = x[labels == j]
            if len(members):
                new_centroids[j] = members.mean(axis=0)
            else:
                # re-seed an empty cluster to the farthest point
                far = np.argmax(d2[np.arange(len(x)), labels])
                new_centroids[j] = x[far]
        shift = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        if shift < tol:
            break
    d2 = np.sum((x[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    labels = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(len(x)), labels].sum())
    return labels, centroids, inertia, iterations


def _hartigan_refine(x, labels, c, max_passes=50):
    """Single-point reassignment passes after Lloyd convergence.

    A point moves when the exact inertia change of the move is negative
    (n_a/(n_a-1)·d_a² removal gain vs n_b/(n_b+1)·d_b² insertion cost),
    which escapes Lloyd-stable local optima on small inputs. Every move
    strictly decreases inertia, so termination is guaranteed.
    """
    labels = labels.copy()
    counts = np.bincount(labels, minlength=c).astype(np.float64)
    sums = np.zeros((c, x.shape[1]))
    for j in range(c):
        if counts[j]:
            sums[j] = x[labels == j].sum(axis=0)
    for _ in range(max_passes):
        improved = False
        for i in range(x.shape[0]):
            a = labels[i]
            if counts[a] <= 1:
                continue
            d_a = np.sum((x[i] - sums[a] / counts[a]) ** 2)
            removal = counts[a] / (counts[a] - 1.0) * d_a
            best_delta, best_b = 0.0, a
            for b in range(c):
                if b == a or counts[b] == 0:
                    continue
                d_b = np.sum((x[i] - sums[b] / counts[b]) ** 2)
                addition = counts[b] / (counts[b] + 1.0) * d_b
                if removal - addition > best_delta + 1e-12:
                    best_delta, best_b = removal - addition, b
            if best_b != a:
                sums[a] -= x[i]
                counts[a] -= 1.0
                sums[best_b] += x[i]
                counts[best_b] += 1.0
                labels[i] = best_b
                improved = True
        if not improved:
            break
    return labels


def kmeans(
    v: np.ndarray,
    c: int,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-6,
    restarts: int = 5,
) -> ClusterResult:
    """Seeded k-means++ with Lloyd iterations and deterministic restarts;
    the minimum-inertia restart wins (lowest restart index on ties)."""
    x = np.asarray(v, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected (N, K) matrix, got shape {x.shape}")
    if c < 1 or x.shape[0] < c:
        raise DataError(f"need N >= C >= 1, got N={x.shape[0]}, C={c}")
    best = None
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        centroids = _kmeans_pp_init(x, c, rng)
        labels, centroids, inertia, iterations = _lloyd(x, centroids, max_iter, tol)
        refined = _hartigan_refine(x, labels, c)
        if not np.array_equal(refined, labels):
            labels = refined
            for j in range(c):
                members = x[labels == j]
                if len(members):
                    centroids[j] = members.mean(axis=0)
            diffs = x - centroids[labels]
            new_inertia = float(np.sum(diffs * diffs))
            assert new_inertia <= inertia + 1e-9, "k-means inertia increased"
            inertia = new_inertia
        if best is None or inertia < best.inertia:
            best = ClusterResult(
                assignments=labels, centroids=centroids, inertia=inertia,
                iterations=iterations,
            )
    return best


def masks_from_clusters(result: ClusterResult, num_frames: int, num_bins: int):
    """Per-cluster binary (T, F) masks; complementary by construction."""
    labels = result.assignments
    if labels.shape[0] != num_frames * num_bins:
        raise ShapeError(
            f"{labels.shape[0]} assignments != {num_frames} * {num_bins} bins"
        )
    c = result.centroids.shape[0]
    return [
        (labels == j).astype(np.float64).reshape(num_frames, num_bins)
        for j in range(c)
    ]


def select_target(separated):
    """Index of the maximum-mean-power stream (lowest index on ties) plus
    the power-descending ordering of all streams."""
    if len(separated) < 2:
        raise DataError(f"need at least 2 streams, got {len(separated)}")
    powers = np.array([w.power() for w in separated])
    if np.all(powers == 0.0):
        raise DataError("all separated streams are silent")
    # stable sort keeps the lowest index first among equal powers
    ordering = list(np.argsort(-powers, kind="stable"))
    return int(ordering[0]), ordering
