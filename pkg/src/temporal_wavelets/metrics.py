"""Partition comparison and the per-layer evaluation protocol."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError, TemporalWaveletError


class EvaluationError(TemporalWaveletError):
    pass


@dataclass(frozen=True)
class ContingencyTable:
    counts: np.ndarray  # (n_p_clusters, n_q_clusters)
    row_sums: np.ndarray
    col_sums: np.ndarray
    n: int


def contingency(p, q) -> ContingencyTable:
    p = np.asarray(p).ravel()
    q = np.asarray(q).ravel()
    if p.shape != q.shape:
        raise DomainError(f"partitions have different lengths ({p.size} vs {q.size})")
    _, pi = np.unique(p, return_inverse=True)
    _, qi = np.unique(q, return_inverse=True)
    n_p = int(pi.max()) + 1 if p.size else 0
    n_q = int(qi.max()) + 1 if q.size else 0
    counts = np.bincount(pi * max(n_q, 1) + qi, minlength=n_p * n_q).reshape(n_p, n_q)
    return ContingencyTable(counts, counts.sum(axis=1), counts.sum(axis=0), int(p.size))


def _pairs(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1.0) / 2.0


def adjusted_rand_index(p, q) -> float:
    """Adjusted Rand index of two labelings.

    When both labelings are trivial in the same way (all singletons, or a
    single block) the index is undefined and 1 is returned.
    """
    tab = contingency(p, q)
    if tab.n <= 1:
        return 1.0
    index = _pairs(tab.counts).sum()
    a = _pairs(tab.row_sums).sum()
    b = _pairs(tab.col_sums).sum()
    total = _pairs(tab.n)
    expected = a * b / total
    maximum = 0.5 * (a + b)
    if maximum == expected:
        return 1.0
    return float((index - expected) / (maximum - expected))


def _entropy(counts, n):
    c = counts[counts > 0].astype(np.float64)
    return float(-(c / n * np.log(c / n)).sum())


def variation_of_information(p, q) -> float:
    """Unnormalized VI in nats: ``H(p|q) + H(q|p)``."""
    tab = contingency(p, q)
    if tab.n == 0:
        return 0.0
    h_joint = _entropy(tab.counts.ravel(), tab.n)
    return max(0.0, 2.0 * h_joint - _entropy(tab.row_sums, tab.n) - _entropy(tab.col_sums, tab.n))


def normalized_variation_of_information(p, q) -> float:
    """VI divided by ``log n``, so it lies in ``[0, 1]``."""
    n = np.asarray(p).size
    vi = variation_of_information(p, q)
    if n <= 1:
        return 0.0
    return float(min(1.0, vi / np.log(n)))


# ---------------------------------------------------------------------------
# evaluation protocol

@dataclass(frozen=True)
class SimilarityCurve:
    """Mean and standard deviation over layers of the per-layer ARI, per scale."""

    mean: np.ndarray
    std: np.ndarray
    per_layer: np.ndarray  # (n_scales, T)


def layer_ari_curve(partitions, truth_labels: np.ndarray) -> SimilarityCurve:
    """Per-layer ARI of flat partitions against a ``(T, N)`` truth array.

    ``partitions`` is a sequence of flat label arrays of length ``N * T`` in
    layer-major order.
    """
    truth = np.asarray(truth_labels)
    if truth.ndim != 2:
        raise EvaluationError("truth labels must be a (T, N) array")
    t_count, n = truth.shape
    rows = []
    for labels in partitions:
        labels = np.asarray(labels)
        if labels.size != n * t_count:
            raise EvaluationError(
                f"partition has {labels.size} node-times but truth covers {t_count} x {n}"
            )
        grid = labels.reshape(t_count, n)
        rows.append([adjusted_rand_index(grid[t], truth[t]) for t in range(t_count)])
    per_layer = np.asarray(rows, dtype=float).reshape(len(rows), t_count)
    return SimilarityCurve(per_layer.mean(axis=1), per_layer.std(axis=1), per_layer)


def per_layer_similarity(result, truth, truth_scale: str) -> SimilarityCurve:
    """Similarity curve of a detection result against one planted scale."""
    labels = truth.labels if hasattr(truth, "labels") else truth
    if truth_scale not in labels:
        raise DomainError(f"truth has no scale {truth_scale!r}; available: {sorted(labels)}")
    partitions = [p.labels for p in result.partitions] if hasattr(result, "partitions") else result
    return layer_ari_curve(partitions, labels[truth_scale])


def success_rate(curve, top: int = 5) -> float:
    """Mean of the ``top`` largest curve values (all values if there are fewer)."""
    values = np.asarray(getattr(curve, "mean", curve), dtype=float).ravel()
    if values.size == 0:
        raise DomainError("empty similarity curve")
    best = np.sort(values)[::-1][:top]
    return float(best.mean())


def evaluation_report(result, truth) -> dict:
    """Per-truth-scale curves, success rates and the instability profile."""
    labels = truth.labels if hasattr(truth, "labels") else truth
    partitions = [p.labels for p in result.partitions]
    report = {"truth_scales": {}, "scales": [float(s) for s in result.scales]}
    for name in labels:
        curve = layer_ari_curve(partitions, labels[name])
        report["truth_scales"][name] = {
            "mean": curve.mean.tolist(),
            "std": curve.std.tolist(),
            "success_rate": success_rate(curve),
        }
    gamma = result.gamma
    report["instability"] = None if gamma is None else (1.0 - np.asarray(gamma)).tolist()
    return report
