"""Automatic selection of the NMF rank (NMFk).

For every candidate rank an ensemble of randomly perturbed copies of the
data is factorized, the signatures of all runs are clustered with a
one-column-per-run constraint, and cosine silhouettes measure how stable the
signatures are. The chosen rank is the largest stable one that still
reconstructs the data about as well as the largest candidate.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InvalidParameter, ShapeMismatch
from .linalg import as_feature_matrix, nmf_factorize

logger = logging.getLogger(__name__)

REFINEMENT_PASSES = 2


@dataclass(frozen=True)
class EnsembleConfig:
    k_min: int = 1
    k_max: int = 8
    n_perturbations: int = 16
    noise_magnitude: float = 0.03
    nmf_seed: int = 0
    nmf_max_iters: int = 500
    nmf_tol: float = 1e-5
    nmf_inner_iters: int = 5
    silhouette_threshold: float = 0.75
    error_tolerance: float = 1.05
    max_workers: int = 1

    def validate(self, shape: tuple[int, int] | None = None) -> None:
        if self.k_min < 1:
            raise InvalidParameter("k_min must be >= 1")
        if self.k_max < self.k_min:
            raise InvalidParameter(f"empty rank range [{self.k_min}, {self.k_max}]")
        if shape is not None and self.k_max > min(shape):
            raise InvalidParameter(f"k_max={self.k_max} exceeds min(n, m)={min(shape)}")
        if self.n_perturbations < 2:
            raise InvalidParameter("n_perturbations must be >= 2")
        if not 0.0 < self.noise_magnitude < 1.0:
            raise InvalidParameter("noise_magnitude must lie in (0, 1)")
        if self.nmf_max_iters < 1 or self.nmf_tol <= 0 or self.nmf_inner_iters < 1:
            raise InvalidParameter("nmf_max_iters, nmf_tol and nmf_inner_iters must be positive")
        if not -1.0 <= self.silhouette_threshold <= 1.0:
            raise InvalidParameter("silhouette_threshold must lie in [-1, 1]")
        if self.error_tolerance < 1.0:
            raise InvalidParameter("error_tolerance must be >= 1")
        if self.max_workers < 1:
            raise InvalidParameter("max_workers must be >= 1")


@dataclass(frozen=True)
class RankRecord:
    k: int
    min_silhouette: float
    mean_silhouette: float
    relative_error: float


@dataclass
class RankSelectionReport:
    per_k: list[RankRecord]
    chosen_k: int
    selection_rationale: str
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_k": [asdict(r) for r in self.per_k],
            "chosen_k": self.chosen_k,
            "selection_rationale": self.selection_rationale,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RankSelectionReport":
        return cls(
            per_k=[RankRecord(**r) for r in d["per_k"]],
            chosen_k=int(d["chosen_k"]),
            selection_rationale=d["selection_rationale"],
            warnings=list(d.get("warnings", [])),
        )


def derive_seed(*parts: int) -> int:
    """Deterministic 32-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def perturb_matrix(x, delta: float, seed: int) -> np.ndarray:
    """Multiplicative uniform noise: ``x * (1 + u)`` with ``u ~ U[-delta, delta]``.

    Zero entries stay zero and the result stays nonnegative.
    """
    if not 0.0 < delta < 1.0:
        raise InvalidParameter(f"delta must lie in (0, 1), got {delta}")
    x = as_feature_matrix(x)
    rng = np.random.default_rng(seed)
    return x * (1.0 + rng.uniform(-delta, delta, size=x.shape))


def _unit_columns(w):
    norms = np.linalg.norm(w, axis=0)
    out = np.zeros_like(w)
    ok = norms > 0
    out[:, ok] = w[:, ok] / norms[ok]
    return out


def silhouette_scores(points: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-point silhouettes under cosine distance.

    ``points`` holds unit vectors as columns. Points whose intra- and
    nearest-cluster distances are both zero score 0.
    """
    sim = np.clip(points.T @ points, -1.0, 1.0)
    dist = np.maximum(1.0 - sim, 0.0)
    clusters = np.unique(labels)
    n = points.shape[1]
    sums = np.stack([dist[:, labels == c].sum(axis=1) for c in clusters], axis=1)
    sizes = np.array([(labels == c).sum() for c in clusters], dtype=float)
    own = np.searchsorted(clusters, labels)
    s = np.zeros(n)
    for i in range(n):
        size = sizes[own[i]]
        if size <= 1:
            continue
        a = sums[i, own[i]] / (size - 1)
        others = np.delete(sums[i] / sizes, own[i])
        b = others.min()
        denom = max(a, b)
        s[i] = 0.0 if denom == 0 else (b - a) / denom
    return s


def cluster_ensemble_signatures(w_list, k: int):
    """Group the columns of an ensemble of ``w`` matrices into ``k`` clusters.

    Each cluster takes exactly one column from every run. Returns
    ``(clusters, silhouettes)`` where ``clusters[c]`` is a list of
    ``(run_index, column_index)`` pairs and ``silhouettes[c]`` is the mean
    cosine silhouette of that cluster.
    """
    if len(w_list) == 0:
        raise InvalidParameter("empty ensemble")
    mats = [np.asarray(w, dtype=float) for w in w_list]
    n = mats[0].shape[0]
    for r, w in enumerate(mats):
        if w.ndim != 2 or w.shape != (n, k):
            raise ShapeMismatch(f"run {r} has shape {w.shape}, expected ({n}, {k})")
    units = [_unit_columns(w) for w in mats]
    n_runs = len(units)

    # assign[r][c] = column of run r placed in cluster c
    assign = np.zeros((n_runs, k), dtype=int)
    assign[0] = np.arange(k)
    centroids = units[0].copy()

    def match(run):
        cost = 1.0 - centroids.T @ units[run]
        rows, cols = linear_sum_assignment(cost)
        out = np.empty(k, dtype=int)
        out[rows] = cols
        return out

    def recenter():
        total = np.zeros((n, k))
        for r in range(n_runs):
            total += units[r][:, assign[r]]
        return _unit_columns(total)

    for r in range(1, n_runs):
        assign[r] = match(r)
    centroids = recenter()
    for _ in range(REFINEMENT_PASSES):
        for r in range(n_runs):
            assign[r] = match(r)
        centroids = recenter()

    clusters = [[(r, int(assign[r, c])) for r in range(n_runs)] for c in range(k)]
    if k == 1:
        return clusters, np.ones(1)

    points = np.concatenate([units[r][:, assign[r]] for r in range(n_runs)], axis=1)
    labels = np.tile(np.arange(k), n_runs)
    s = silhouette_scores(points, labels)
    silhouettes = np.array([s[labels == c].mean() for c in range(k)])
    return clusters, silhouettes


def _run_member(x, k, run, config):
    xp = perturb_matrix(x, config.noise_magnitude, derive_seed(config.nmf_seed, 0, run))
    fact = nmf_factorize(
        xp,
        k,
        seed=derive_seed(config.nmf_seed, 1, k, run),
        max_iters=config.nmf_max_iters,
        tol=config.nmf_tol,
        inner_iters=config.nmf_inner_iters,
        inner_delta=0.1,
    )
    w = fact.w
    if fact.k < k:
        # pruned signatures become zero columns: maximally unstable
        w = np.concatenate([w, np.zeros((w.shape[0], k - fact.k))], axis=1)
    # Error against the unperturbed data: extra ranks that only fit the
    # perturbation noise do not improve it.
    err = float(np.linalg.norm(x - fact.w @ fact.h) / np.linalg.norm(x))
    return w, err


def select_rank(x, config: EnsembleConfig | None = None) -> RankSelectionReport:
    """Estimate the number of latent signatures in ``x``."""
    config = config or EnsembleConfig()
    x = as_feature_matrix(x)
    config.validate(x.shape)
    ks = list(range(config.k_min, config.k_max + 1))
    tasks = [(k, r) for k in ks for r in range(config.n_perturbations)]

    def run(task):
        return _run_member(x, task[0], task[1], config)

    if config.max_workers > 1:
        with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]
    by_task = dict(zip(tasks, results))

    per_k = []
    for k in ks:
        members = [by_task[(k, r)] for r in range(config.n_perturbations)]
        _, sil = cluster_ensemble_signatures([m[0] for m in members], k)
        per_k.append(
            RankRecord(
                k=k,
                min_silhouette=float(sil.min()),
                mean_silhouette=float(sil.mean()),
                relative_error=float(np.median([m[1] for m in members])),
            )
        )

    warnings = []
    for prev, cur in zip(per_k, per_k[1:]):
        if cur.relative_error > prev.relative_error + 0.05:
            warnings.append(
                f"relative error rose from {prev.relative_error:.4g} at k={prev.k} "
                f"to {cur.relative_error:.4g} at k={cur.k}"
            )

    if len(per_k) == 1:
        chosen = per_k[0].k
        why = "single candidate rank"
    else:
        err_cap = config.error_tolerance * per_k[-1].relative_error
        ok = [
            r.k
            for r in per_k
            if r.min_silhouette >= config.silhouette_threshold and r.relative_error <= err_cap
        ]
        if ok:
            chosen = max(ok)
            why = (
                f"largest k with min silhouette >= {config.silhouette_threshold} "
                f"and relative error <= {err_cap:.4g}"
            )
        else:
            best = max(r.min_silhouette for r in per_k)
            chosen = max(r.k for r in per_k if r.min_silhouette == best)
            why = f"no k met both criteria; largest k with maximal min silhouette ({best:.4g})"
    logger.debug("rank selection chose k=%d: %s", chosen, why)
    return RankSelectionReport(per_k=per_k, chosen_k=chosen, selection_rationale=why, warnings=warnings)
