"""Reject-option classification against a signature archive.

A sample is projected onto the archive with NNLS and every signature is
scored by its cosine similarity to the reconstruction. Three confidence
metrics turn those scores into a prediction:

* ``projection_similarity``: the best single signature.
* ``ensemble_voting``: per-class fraction of signatures above a vote threshold.
* ``data_augmentation``: mean best similarity over random perturbations of the sample.
"""

from __future__ import annotations

import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .archive import SignatureArchive
from .errors import DimensionMismatch, InvalidParameter
from .linalg import cosine_to_columns, nnls_solve

REJECT = "REJECT"

PROJECTION = "projection_similarity"
ENSEMBLE = "ensemble_voting"
AUGMENTATION = "data_augmentation"
METRICS = (PROJECTION, ENSEMBLE, AUGMENTATION)


@dataclass(frozen=True)
class AugmentationConfig:
    p: int = 10
    epsilon_norm: float = 0.015
    n_bootstrap: int = 50
    seed: int = 0

    def validate(self):
        if self.p < 1 or self.n_bootstrap < 1:
            raise InvalidParameter("p and n_bootstrap must be positive")
        if not self.epsilon_norm > 0:
            raise InvalidParameter(f"epsilon_norm must be positive, got {self.epsilon_norm}")


@dataclass(frozen=True)
class MetricParams:
    vote_threshold: float = 0.5
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)


@dataclass
class Prediction:
    outcome: str
    confidence: float
    metric: str
    detail: dict = field(default_factory=dict)

    @property
    def rejected(self) -> bool:
        return self.outcome == REJECT

    def to_record(self, sample_id: str, verbose: bool = False) -> dict:
        rec = {"sample_id": sample_id, "metric": self.metric, "outcome": self.outcome, "confidence": self.confidence}
        if verbose:
            rec["detail"] = _jsonable(self.detail)
        return rec

    def to_json(self, sample_id: str, verbose: bool = False) -> str:
        return json.dumps(self.to_record(sample_id, verbose), sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _check(archive: SignatureArchive, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != archive.feature_count:
        raise DimensionMismatch(f"sample has {x.shape[0]} features, archive expects {archive.feature_count}")
    return x


def score_signatures(archive: SignatureArchive, x) -> np.ndarray:
    """Cosine similarity of every signature to the NNLS reconstruction of ``x``."""
    x = _check(archive, x)
    proj = nnls_solve(archive.m_matrix, x)
    return np.clip(cosine_to_columns(archive.m_matrix, proj.reconstruction), 0.0, 1.0)


def _decide(label, confidence, threshold):
    return label if confidence > threshold else REJECT


# Each _predict_* returns (label, confidence, detail) before thresholding.


def _predict_projection(archive, x):
    s = score_signatures(archive, x)
    j = int(np.argmax(s))
    return archive.signature_labels[j], float(s[j]), {"similarities": s}


def _ensemble_votes(archive, s, vote_threshold):
    raw, normed, best_sim = {}, {}, {}
    for c, members in archive.class_index.items():
        if not members:
            continue
        sims = s[members]
        raw[c] = int(np.sum(sims > vote_threshold))
        normed[c] = raw[c] / len(members)
        best_sim[c] = float(sims.max())
    return raw, normed, best_sim


def _predict_ensemble(archive, x, vote_threshold):
    s = score_signatures(archive, x)
    raw, normed, best_sim = _ensemble_votes(archive, s, vote_threshold)
    order = {c: i for i, c in enumerate(archive.class_set)}
    # highest normalized vote, then highest single similarity, then class order
    label = min(normed, key=lambda c: (-normed[c], -best_sim[c], order[c]))
    detail = {"similarities": s, "votes": raw, "normalized_votes": normed}
    return label, float(normed[label]), detail


def _unit_directions(rng, count, n):
    g = rng.standard_normal((count, n))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return g / norms


def _predict_augmented(archive, x, aug: AugmentationConfig):
    aug.validate()
    x = _check(archive, x)
    rng = np.random.default_rng(aug.seed)
    total = aug.p * aug.n_bootstrap
    eps = _unit_directions(rng, total, x.shape[0]) * aug.epsilon_norm
    tops = np.empty(total)
    labels = []
    for i in range(total):
        s = score_signatures(archive, np.maximum(x + eps[i], 0.0))
        j = int(np.argmax(s))
        tops[i] = s[j]
        labels.append(archive.signature_labels[j])
    counts = Counter(labels)
    order = {c: i for i, c in enumerate(archive.class_set)}
    label = min(counts, key=lambda c: (-counts[c], order[c]))
    detail = {
        "perturbation_similarities": tops,
        "label_counts": dict(sorted(counts.items())),
    }
    return label, float(tops.mean()), detail


def predict(archive: SignatureArchive, x, metric: str, params: MetricParams | None = None):
    """Label and confidence of ``x`` under ``metric`` with no rejection applied."""
    params = params or MetricParams()
    if metric == PROJECTION:
        return _predict_projection(archive, x)
    if metric == ENSEMBLE:
        return _predict_ensemble(archive, x, params.vote_threshold)
    if metric == AUGMENTATION:
        return _predict_augmented(archive, x, params.augmentation)
    raise InvalidParameter(f"unknown metric {metric!r}; expected one of {METRICS}")


def classify(archive: SignatureArchive, x, metric: str, threshold: float, params: MetricParams | None = None) -> Prediction:
    label, conf, detail = predict(archive, x, metric, params)
    return Prediction(outcome=_decide(label, conf, threshold), confidence=conf, metric=metric, detail=detail)


def classify_projection(archive: SignatureArchive, x, threshold: float) -> Prediction:
    return classify(archive, x, PROJECTION, threshold)


def classify_ensemble(archive: SignatureArchive, x, vote_threshold: float = 0.5, threshold: float = 0.5) -> Prediction:
    return classify(archive, x, ENSEMBLE, threshold, MetricParams(vote_threshold=vote_threshold))


def classify_augmented(
    archive: SignatureArchive, x, aug: AugmentationConfig | None = None, threshold: float = 0.5
) -> Prediction:
    return classify(archive, x, AUGMENTATION, threshold, MetricParams(augmentation=aug or AugmentationConfig()))


def confidence_score(archive: SignatureArchive, x, metric: str, params: MetricParams | None = None) -> float:
    return predict(archive, x, metric, params)[1]


def _map_columns(fn, matrix, max_workers):
    cols = [matrix[:, j] for j in range(matrix.shape[1])]
    if max_workers > 1:
        # results come back in column order whatever the scheduling
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            return list(pool.map(fn, cols))
    return [fn(c) for c in cols]


def _check_batch(archive, matrix):
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != archive.feature_count:
        raise DimensionMismatch(f"expected ({archive.feature_count}, m) samples matrix, got {matrix.shape}")
    return matrix


def predict_batch(
    archive: SignatureArchive, matrix, metric: str, params: MetricParams | None = None, max_workers: int = 1
):
    """Unthresholded ``(labels, confidences)`` for every column of ``matrix``."""
    matrix = _check_batch(archive, matrix)
    out = _map_columns(lambda x: predict(archive, x, metric, params), matrix, max_workers)
    return [o[0] for o in out], np.array([o[1] for o in out], dtype=float)


def classify_batch(
    archive, matrix, metric: str, threshold: float, params: MetricParams | None = None, max_workers: int = 1
) -> list[Prediction]:
    matrix = _check_batch(archive, matrix)
    return _map_columns(lambda x: classify(archive, x, metric, threshold, params), matrix, max_workers)
