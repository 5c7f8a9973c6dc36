"""Retrieval metrics and embedding diagnostics.

Brute-force exact evaluation: cosine similarities against the full gallery,
ranked descending with ties broken by gallery index ascending. Recall@K
counts queries with a same-class item in the top K; R-Precision scores the
top R where R is the query's same-class gallery count; MAP@R averages
precision at each relevant rank up to R. Also per-dimension variance
summaries and a deterministic 2-D principal-component projection.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigurationError, ShapeError


@dataclass
class RetrievalIndex:
    gallery_z: np.ndarray
    gallery_labels: np.ndarray
    query_z: np.ndarray
    query_labels: np.ndarray
    exclude_self: bool

    def __post_init__(self):
        self.gallery_z = np.asarray(self.gallery_z, dtype=np.float64)
        self.query_z = np.asarray(self.query_z, dtype=np.float64)
        self.gallery_labels = np.asarray(self.gallery_labels, dtype=np.int64)
        self.query_labels = np.asarray(self.query_labels, dtype=np.int64)
        if self.gallery_z.shape[1] != self.query_z.shape[1]:
            raise ShapeError("query and gallery dims differ")
        for z in (self.gallery_z, self.query_z):
            norms = np.linalg.norm(z, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-5):
                raise ShapeError("retrieval index expects unit-norm rows")
        if self.exclude_self and self.gallery_z.shape[0] != self.query_z.shape[0]:
            raise ShapeError("self-exclusion requires query set == gallery set")

    @classmethod
    def single_set(cls, z: np.ndarray, labels: np.ndarray) -> "RetrievalIndex":
        """CUB/Cars/SOP-style protocol: queries retrieve from themselves."""
        return cls(z, labels, z, labels, exclude_self=True)

    @classmethod
    def query_gallery(cls, query_z, query_labels, gallery_z, gallery_labels) -> "RetrievalIndex":
        """InShop-style protocol with disjoint query and gallery subsets."""
        return cls(gallery_z, gallery_labels, query_z, query_labels, exclude_self=False)

    @property
    def effective_gallery_size(self) -> int:
        return self.gallery_z.shape[0] - (1 if self.exclude_self else 0)

    def ranked_hits(self) -> np.ndarray:
        sims = self.query_z @ self.gallery_z.T
        return kernels.ranked_hits(
            sims, self.query_labels, self.gallery_labels, self.exclude_self
        )


@dataclass
class MetricReport:
    recall_at: dict[int, float] = field(default_factory=dict)
    r_precision: float = 0.0
    map_at_r: float = 0.0
    n_queries: int = 0
    n_skipped: int = 0

    def to_dict(self) -> dict:
        return {
            "recall_at": {str(k): v for k, v in self.recall_at.items()},
            "r_precision": self.r_precision,
            "map_at_r": self.map_at_r,
            "n_queries": self.n_queries,
            "n_skipped": self.n_skipped,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def recall_at_k(index: RetrievalIndex, ks: list[int], hits: np.ndarray | None = None) -> dict[int, float]:
    if hits is None:
        hits = index.ranked_hits()
    out: dict[int, float] = {}
    for k in ks:
        if k < 1:
            raise ConfigurationError(f"recall K must be >= 1, got {k}")
        if k > index.effective_gallery_size:
            raise ConfigurationError(
                f"recall K={k} exceeds gallery size {index.effective_gallery_size}"
            )
        out[int(k)] = float(hits[:, :k].any(axis=1).mean())
    return out


def _per_query_r(hits: np.ndarray) -> np.ndarray:
    return hits.sum(axis=1).astype(np.int64)


def r_precision(index: RetrievalIndex, hits: np.ndarray | None = None) -> float:
    if hits is None:
        hits = index.ranked_hits()
    r = _per_query_r(hits)
    keep = r > 0
    if not np.all(keep):
        warnings.warn(f"skipping {int((~keep).sum())} queries with no same-class gallery items")
    if not np.any(keep):
        raise ConfigurationError("no query has a same-class gallery item")
    csum = hits.cumsum(axis=1)
    rk = r[keep]
    prec = csum[keep, rk - 1] / rk
    return float(prec.mean())


def map_at_r(index: RetrievalIndex, hits: np.ndarray | None = None) -> float:
    if hits is None:
        hits = index.ranked_hits()
    r = _per_query_r(hits)
    keep = r > 0
    if not np.all(keep):
        warnings.warn(f"skipping {int((~keep).sum())} queries with no same-class gallery items")
    if not np.any(keep):
        raise ConfigurationError("no query has a same-class gallery item")
    csum = hits.astype(np.int64).cumsum(axis=1)
    ranks = np.arange(1, hits.shape[1] + 1)
    prec_at = csum / ranks
    within_r = ranks[None, :] <= r[:, None]
    # cumsum accumulates left to right, matching a rank-ascending loop bit
    # for bit (skipped ranks contribute exactly 0.0)
    ap_sum = np.cumsum(prec_at * hits * within_r, axis=1)[:, -1]
    ap = ap_sum[keep] / r[keep]
    return float(ap.mean())


def evaluate_retrieval(index: RetrievalIndex, ks: list[int]) -> MetricReport:
    hits = index.ranked_hits()
    r = _per_query_r(hits)
    return MetricReport(
        recall_at=recall_at_k(index, ks, hits),
        r_precision=r_precision(index, hits),
        map_at_r=map_at_r(index, hits),
        n_queries=int(hits.shape[0]),
        n_skipped=int((r == 0).sum()),
    )


def embedding_stats(embeddings: np.ndarray, hist_bins: int = 10) -> dict:
    """Per-dimension mean/variance plus a variance histogram and quantiles."""
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ShapeError("embedding_stats needs a 2-D array with >= 2 rows")
    var = x.var(axis=0)
    counts, edges = np.histogram(var, bins=hist_bins)
    qs = np.quantile(var, [0.0, 0.25, 0.5, 0.75, 1.0])
    return {
        "per_dim_mean": x.mean(axis=0),
        "per_dim_var": var,
        "var_hist_counts": counts,
        "var_hist_edges": edges,
        "var_quantiles": qs,
        "total_var": float(var.sum()),
    }


def project_2d(embeddings: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Top-2 principal components with a deterministic sign convention.

    Each component is flipped so its largest-magnitude coordinate is
    positive. Returns (coords (n, 2), all eigenvalues descending). A
    rank-deficient direction yields exact zeros with a warning.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise ShapeError("project_2d needs a 2-D array with >= 3 rows")
    centered = x - x.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / (x.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    coords = np.zeros((x.shape[0], 2))
    tol = max(eigvals[0], 0.0) * 1e-12
    for c in range(2):
        if c >= eigvals.size or eigvals[c] <= tol:
            warnings.warn(f"rank-deficient embedding: component {c} set to zero")
            continue
        v = eigvecs[:, c]
        pivot = np.argmax(np.abs(v))
        if v[pivot] < 0:
            v = -v
        coords[:, c] = centered @ v
    return coords, eigvals
