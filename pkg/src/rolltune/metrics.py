"""Retrieval evaluation: squared-L2 distance matching, CMC and mAP.

Gallery candidates are ranked per query by ascending squared Euclidean
distance with stable tie-breaking by gallery index. Queries without any
relevant gallery item are excluded from the metric means and counted in
the report.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError
from .model import NetworkParams, forward_features
from .tensor import no_grad


@dataclass
class FeatureSet:
    features: np.ndarray          # M x D
    labels: np.ndarray            # M
    cameras: np.ndarray | None = None

    def __post_init__(self):
        if self.features.shape[0] != self.labels.shape[0]:
            raise ShapeError(
                f"{self.features.shape[0]} feature rows vs {self.labels.shape[0]} labels")


@dataclass
class RetrievalReport:
    distances: np.ndarray          # M_q x M_g
    cmc: dict[int, float]
    average_precisions: np.ndarray  # per query; NaN marks excluded queries
    mean_ap: float
    num_queries: int
    num_excluded: int

    def summary_csv(self) -> str:
        ranks = sorted(self.cmc)
        header = "map," + ",".join(f"rank{k}" for k in ranks)
        row = format(self.mean_ap, ".6f") + "," + ",".join(
            format(self.cmc[k], ".6f") for k in ranks)
        return header + "\n" + row + "\n"

    def per_query_csv(self) -> str:
        lines = ["query,ap"]
        for i, ap in enumerate(self.average_precisions):
            lines.append(f"{i}," + ("" if np.isnan(ap) else format(ap, ".6f")))
        return "\n".join(lines) + "\n"


def features_for(params: NetworkParams, images: np.ndarray,
                 flip_fusion: bool = True, batch_size: int = 64) -> np.ndarray:
    """Eval-mode features; with fusion, F(x) + F(flip(x)) per sample."""
    rows = []
    with no_grad():
        for start in range(0, images.shape[0], batch_size):
            xb = images[start:start + batch_size]
            feats = forward_features(xb, params, mode="eval").data
            if flip_fusion:
                feats = feats + forward_features(
                    xb[:, :, :, ::-1].copy(), params, mode="eval").data
            rows.append(feats)
    return np.concatenate(rows, axis=0)


def extract_features(params: NetworkParams, dataset, flip_fusion: bool = True,
                     batch_size: int = 64) -> FeatureSet:
    feats = features_for(params, dataset.images, flip_fusion, batch_size)
    cameras = getattr(dataset, "cameras", None)
    return FeatureSet(feats, np.asarray(dataset.labels), cameras)


def _as_feature_matrix(x) -> np.ndarray:
    return x.features if isinstance(x, FeatureSet) else np.asarray(x)


def distance_matrix(query, gallery) -> np.ndarray:
    """Squared Euclidean distances via the norm expansion, clamped at 0."""
    q = _as_feature_matrix(query)
    g = _as_feature_matrix(gallery)
    if q.ndim != 2 or g.ndim != 2 or q.shape[1] != g.shape[1]:
        raise ShapeError(f"feature dims differ: {q.shape} vs {g.shape}")
    qq = (q * q).sum(axis=1, keepdims=True)
    gg = (g * g).sum(axis=1, keepdims=True).T
    d = qq + gg - 2.0 * (q @ g.T)
    return np.maximum(d, 0.0)


def _match_rows(dist: np.ndarray, query_labels, gallery_labels,
                query_cams=None, gallery_cams=None, cross_camera: bool = False):
    """Per query: boolean match vector over the (filtered) ranked gallery."""
    ql = np.asarray(query_labels)
    gl = np.asarray(gallery_labels)
    if dist.shape != (len(ql), len(gl)):
        raise ShapeError(f"distance matrix {dist.shape} vs {len(ql)} x {len(gl)} labels")
    order = np.argsort(dist, axis=1, kind="stable")
    rows = []
    for qi in range(len(ql)):
        ranked = order[qi]
        if cross_camera:
            if query_cams is None or gallery_cams is None:
                raise ValidationError("cross_camera filtering needs camera ids")
            junk = ((np.asarray(gallery_cams)[ranked] == np.asarray(query_cams)[qi])
                    & (gl[ranked] == ql[qi]))
            ranked = ranked[~junk]
        rows.append(gl[ranked] == ql[qi])
    return rows


def cmc(dist: np.ndarray, query_labels, gallery_labels, ranks=(1, 5, 10),
        query_cams=None, gallery_cams=None, cross_camera: bool = False
        ) -> dict[int, float]:
    """Fraction of valid queries with a correct match in the top-k ranking."""
    rows = _match_rows(dist, query_labels, gallery_labels,
                       query_cams, gallery_cams, cross_camera)
    first_hits = [int(np.argmax(m)) for m in rows if m.any()]
    if not first_hits:
        raise ValidationError("no query has a relevant gallery item")
    hits = np.asarray(first_hits)
    return {int(k): float(np.mean(hits < k)) for k in ranks}


def mean_ap(dist: np.ndarray, query_labels, gallery_labels,
            query_cams=None, gallery_cams=None, cross_camera: bool = False
            ) -> tuple[np.ndarray, float]:
    """Per-query average precision (NaN for excluded queries) and their mean."""
    rows = _match_rows(dist, query_labels, gallery_labels,
                       query_cams, gallery_cams, cross_camera)
    aps = np.full(len(rows), np.nan)
    for qi, matches in enumerate(rows):
        relevant = matches.sum()
        if relevant == 0:
            continue
        hits = np.cumsum(matches)
        precision_at_hit = hits[matches] / (np.flatnonzero(matches) + 1.0)
        aps[qi] = precision_at_hit.sum() / relevant
    valid = aps[~np.isnan(aps)]
    if valid.size == 0:
        raise ValidationError("no query has a relevant gallery item")
    return aps, float(valid.mean())


def evaluate_retrieval(params: NetworkParams, query_dataset, gallery_dataset,
                       flip_fusion: bool = True, ranks=(1, 5, 10),
                       cross_camera: bool = False) -> RetrievalReport:
    qf = extract_features(params, query_dataset, flip_fusion)
    gf = extract_features(params, gallery_dataset, flip_fusion)
    dist = distance_matrix(qf, gf)
    kw = dict(query_cams=qf.cameras, gallery_cams=gf.cameras,
              cross_camera=cross_camera)
    cmc_values = cmc(dist, qf.labels, gf.labels, ranks=ranks, **kw)
    aps, value = mean_ap(dist, qf.labels, gf.labels, **kw)
    return RetrievalReport(distances=dist, cmc=cmc_values,
                           average_precisions=aps, mean_ap=value,
                           num_queries=len(qf.labels),
                           num_excluded=int(np.isnan(aps).sum()))
