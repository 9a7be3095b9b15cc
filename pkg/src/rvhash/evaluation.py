"""Retrieval and classification metrics.

Average precision is the non-interpolated kind: mean of precision@rank over
the ranks of relevant items. The P-R curve is a reporting artifact — per
query, interpolated precision max(prec@r' for recall@r' >= g) sampled on a
101-point recall grid and averaged over queries — and is not used for mAP.

Metric files are tab-separated; floats use shortest round-trip repr.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .layers import PredictParams, predict_forward
from .retrieval import RetrievalResult

PR_GRID_POINTS = 101


def precision_recall_at_k(result: RetrievalResult, k: int):
    """(precision, recall) after retrieving the top k items."""
    n = len(result)
    if not (1 <= k <= n):
        raise ValueError(f"k must be in [1, {n}], got {k}")
    total_relevant = int(result.relevant.sum())
    if total_relevant == 0:
        raise DataError(f"query {result.query_id}: no relevant items, recall undefined")
    hits = int(result.relevant[:k].sum())
    return hits / k, hits / total_relevant


def average_precision(result: RetrievalResult) -> float:
    """Mean precision at relevant ranks. Summed in rank order."""
    rel = np.asarray(result.relevant, dtype=bool)
    total = int(rel.sum())
    if total == 0:
        raise DataError(f"query {result.query_id}: no relevant items, AP undefined")
    acc = 0.0
    hits = 0
    for rank0 in np.flatnonzero(rel):
        hits += 1
        acc += hits / (int(rank0) + 1)
    return acc / total


def mean_ap(aps) -> float:
    values = [float(a) for a in aps]
    if not values:
        raise DataError("mean_ap needs at least one query with relevant items")
    return sum(values) / len(values)


@dataclass
class PrCurve:
    recalls: np.ndarray     # the grid, 0.00 .. 1.00
    precisions: np.ndarray  # query-averaged interpolated precision


def pr_curve(results: list[RetrievalResult], n_points: int = PR_GRID_POINTS) -> PrCurve:
    """Average the per-query interpolated P-R trade-off on a fixed recall grid."""
    if not results:
        raise DataError("pr_curve needs at least one query")
    grid = np.linspace(0.0, 1.0, n_points)
    acc = np.zeros(n_points)
    for r in results:
        rel = np.asarray(r.relevant, dtype=np.float64)
        total = rel.sum()
        if total == 0:
            raise DataError(f"query {r.query_id}: no relevant items")
        ranks = np.arange(1, len(rel) + 1)
        prec = np.cumsum(rel) / ranks
        recall = np.cumsum(rel) / total
        # running max from the right = interpolated precision at each rank
        interp = np.maximum.accumulate(prec[::-1])[::-1]
        idx = np.searchsorted(recall, grid, side="left")
        acc += interp[np.minimum(idx, len(rel) - 1)]
    return PrCurve(recalls=grid, precisions=acc / len(results))


def top1_error(features: np.ndarray, params: PredictParams, labels: np.ndarray) -> float:
    """Fraction of samples whose argmax predicted class is wrong.

    `features` are the prediction layer's inputs (continuous hash values for
    the hash variants). Argmax ties break toward the lowest class index.
    """
    probs = predict_forward(np.atleast_2d(features), params)
    pred = np.argmax(probs, axis=1)
    return float(np.mean(pred != np.asarray(labels)))


def _fmt(x) -> str:
    return repr(float(x))


def write_pr_curve(path, curve: PrCurve) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r, p in zip(curve.recalls, curve.precisions):
            f.write(f"{r:.2f}\t{_fmt(p)}\n")


def write_map(path, per_query: list[tuple[int, float | None]], map_value: float) -> None:
    """Per-query AP lines (None = excluded, no relevant items), then mAP."""
    with open(path, "w", encoding="utf-8") as f:
        for qid, ap in per_query:
            f.write(f"{qid}\texcluded\n" if ap is None else f"{qid}\t{_fmt(ap)}\n")
        f.write(f"mAP\t{_fmt(map_value)}\n")


def write_top1(path, value: float) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"top1_error\t{_fmt(value)}\n")
