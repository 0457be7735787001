"""Hierarchical construction of the labeled signature archive.

Each node of the hierarchy factorizes its samples, assigns every sample to
its dominant signature, archives the signatures whose sample clusters are
class-uniform and recurses on the clusters that are not.
"""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import FeatureTable, NormalizationParams, apply_normalization
from .errors import BuildFailed, DimensionMismatch, FormatError, InvalidParameter
from .linalg import as_feature_matrix, nmf_factorize
from .rank import EnsembleConfig, derive_seed, select_rank

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass
class LabeledDataset:
    """Samples as columns of ``matrix``; a ``None`` label marks an unlabeled sample."""

    matrix: np.ndarray
    sample_ids: list[str]
    labels: list[str | None]
    class_set: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.matrix = as_feature_matrix(self.matrix)
        m = self.matrix.shape[1]
        if len(self.sample_ids) != m or len(self.labels) != m:
            raise DimensionMismatch(
                f"matrix has {m} columns but {len(self.sample_ids)} ids and {len(self.labels)} labels"
            )
        if len(set(self.sample_ids)) != m:
            raise InvalidParameter("sample ids must be unique")
        if not self.class_set:
            self.class_set = sorted({lab for lab in self.labels if lab is not None})
        unknown = {lab for lab in self.labels if lab is not None} - set(self.class_set)
        if unknown:
            raise InvalidParameter(f"labels outside class_set: {sorted(unknown)}")

    @property
    def n_samples(self) -> int:
        return self.matrix.shape[1]

    @classmethod
    def from_table(cls, table: FeatureTable, params: NormalizationParams, class_set=None) -> "LabeledDataset":
        return cls(
            matrix=apply_normalization(params, table.values).reshape(params.n_features, len(table)),
            sample_ids=list(table.sample_ids),
            labels=list(table.labels),
            class_set=list(class_set or []),
        )


@dataclass
class ClusterAssignment:
    cluster_of: np.ndarray  # int, -1 where unassigned
    confidence_of: np.ndarray
    threshold: float

    def members(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.cluster_of == c)


@dataclass
class ClusterRecord:
    is_uniform: bool
    majority_label: str | None
    labeled_count: int
    total_count: int


@dataclass
class BuildConfig:
    tau: float = 0.6
    max_depth: int = 5
    min_cluster_size: int = 10
    min_labeled_fraction: float = 0.3
    rank_config: EnsembleConfig = field(default_factory=EnsembleConfig)
    nmf_max_iters: int = 2000
    nmf_tol: float = 1e-6
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 < self.tau < 1.0:
            raise InvalidParameter(f"tau must lie in (0, 1), got {self.tau}")
        if self.max_depth < 1:
            raise InvalidParameter("max_depth must be positive")
        if self.min_cluster_size < 1:
            raise InvalidParameter("min_cluster_size must be positive")
        if not 0.0 < self.min_labeled_fraction <= 1.0:
            raise InvalidParameter("min_labeled_fraction must lie in (0, 1]")
        if self.nmf_max_iters < 1 or self.nmf_tol <= 0:
            raise InvalidParameter("nmf_max_iters and nmf_tol must be positive")
        self.rank_config.validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        # parallelism never changes the result, so it is not part of the echo
        d["rank_config"].pop("max_workers", None)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BuildConfig":
        d = dict(d)
        if "rank_config" in d and isinstance(d["rank_config"], dict):
            d["rank_config"] = EnsembleConfig(**d["rank_config"])
        return cls(**d)


@dataclass
class SignatureArchive:
    m_matrix: np.ndarray  # (n, K), unit-norm columns
    signature_labels: list[str]
    signature_meta: list[dict]
    class_set: list[str]
    normalization: NormalizationParams | None = None
    build_config: dict | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.m_matrix = np.asarray(self.m_matrix, dtype=float)
        if self.m_matrix.ndim != 2:
            raise DimensionMismatch("archive matrix must be 2-D")
        if len(self.signature_labels) != self.m_matrix.shape[1] or len(self.signature_meta) != self.m_matrix.shape[1]:
            raise DimensionMismatch("one label and one meta record per signature required")
        stray = set(self.signature_labels) - set(self.class_set)
        if stray:
            raise InvalidParameter(f"signature labels outside class_set: {sorted(stray)}")

    @property
    def feature_count(self) -> int:
        return self.m_matrix.shape[0]

    @property
    def n_signatures(self) -> int:
        return self.m_matrix.shape[1]

    @property
    def class_index(self) -> dict[str, list[int]]:
        index = {c: [] for c in self.class_set}
        for j, lab in enumerate(self.signature_labels):
            index[lab].append(j)
        return index


@dataclass
class BuildTrace:
    nodes: list[dict] = field(default_factory=list)
    n_samples: int = 0
    archived: int = 0
    discarded: int = 0
    unassigned: int = 0

    @property
    def max_depth(self) -> int:
        return max((n["depth"] for n in self.nodes), default=0)

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "archived": self.archived,
            "discarded": self.discarded,
            "unassigned": self.unassigned,
            "max_depth": self.max_depth,
            "nodes": self.nodes,
        }


def assign_clusters(h, tau: float) -> ClusterAssignment:
    """Assign each column of ``h`` to its argmax row if the column-normalized
    maximum exceeds ``tau``. All-zero columns stay unassigned with confidence 0."""
    h = np.asarray(h, dtype=float)
    if h.ndim != 2:
        raise DimensionMismatch("activation matrix must be 2-D")
    if np.any(h < 0):
        raise InvalidParameter("activation matrix must be nonnegative")
    if not 0.0 <= tau < 1.0:
        raise InvalidParameter(f"tau must lie in [0, 1), got {tau}")
    sums = h.sum(axis=0)
    safe = np.where(sums > 0, sums, 1.0)
    p = h / safe
    best = np.argmax(p, axis=0)
    conf = np.where(sums > 0, p[best, np.arange(h.shape[1])], 0.0)
    cluster = np.where((sums > 0) & (conf > tau), best, -1)
    return ClusterAssignment(cluster_of=cluster.astype(int), confidence_of=conf, threshold=float(tau))


def check_uniformity(
    assignment: ClusterAssignment,
    dataset: LabeledDataset,
    min_cluster_size: int = 10,
    min_labeled_fraction: float = 0.3,
    n_clusters: int | None = None,
) -> list[ClusterRecord]:
    """Per-cluster uniformity: enough members, enough of them labeled, and
    every present label identical."""
    labels = dataset.labels
    if len(labels) != assignment.cluster_of.shape[0]:
        raise DimensionMismatch("assignment and dataset disagree in sample count")
    if n_clusters is None:
        n_clusters = int(assignment.cluster_of.max(initial=-1)) + 1
    out = []
    for c in range(n_clusters):
        idx = assignment.members(c)
        present = [labels[i] for i in idx if labels[i] is not None]
        total = int(idx.shape[0])
        uniform = (
            total >= min_cluster_size
            and len(present) >= min_labeled_fraction * total
            and len(present) > 0
            and len(set(present)) == 1
        )
        out.append(ClusterRecord(uniform, present[0] if uniform else None, len(present), total))
    return out


def _node_rank_config(config: BuildConfig, node_id: int, n: int, m: int, mixed: bool) -> EnsembleConfig:
    rc = config.rank_config
    k_max = min(rc.k_max, n, m)
    # a single signature cannot split samples carrying different labels
    k_min = max(rc.k_min, 2) if mixed else rc.k_min
    k_min = min(k_min, k_max)
    return replace(rc, k_min=k_min, k_max=k_max, nmf_seed=derive_seed(rc.nmf_seed, config.seed, node_id))


def build_archive(dataset: LabeledDataset, config: BuildConfig | None = None) -> tuple[SignatureArchive, BuildTrace]:
    """Build the archive breadth-first; signatures are appended in
    (depth, node, cluster) order."""
    config = config or BuildConfig()
    config.validate()
    labeled = [lab for lab in dataset.labels if lab is not None]
    if len(labeled) < 2 or not dataset.class_set:
        raise BuildFailed("need at least two labeled samples and one known class")

    x = dataset.matrix
    n = x.shape[0]
    columns, labels, metas = [], [], []
    trace = BuildTrace(n_samples=dataset.n_samples)
    queue = deque([(0, np.arange(dataset.n_samples), None)])
    next_id = 0

    while queue:
        depth, idx, parent = queue.popleft()
        node_id = next_id
        next_id += 1
        node = {"node_id": node_id, "parent": parent, "depth": depth, "n_samples": int(idx.shape[0])}
        trace.nodes.append(node)
        sub = x[:, idx]
        if idx.shape[0] < config.min_cluster_size or not np.any(sub > 0):
            node.update(outcome="discarded", discarded=int(idx.shape[0]))
            trace.discarded += int(idx.shape[0])
            continue

        mixed = len({dataset.labels[i] for i in idx if dataset.labels[i] is not None}) > 1
        rank_cfg = _node_rank_config(config, node_id, n, idx.shape[0], mixed)
        report = select_rank(sub, rank_cfg)
        fact = nmf_factorize(
            sub,
            report.chosen_k,
            seed=derive_seed(config.seed, node_id, 7),
            max_iters=config.nmf_max_iters,
            tol=config.nmf_tol,
        )
        # unit-norm signatures so activations are comparable across rows
        norms = np.linalg.norm(fact.w, axis=0)
        w = fact.w / norms
        h = fact.h * norms[:, None]

        assignment = assign_clusters(h, config.tau)
        sub_ds = _SubLabels([dataset.labels[i] for i in idx])
        records = check_uniformity(
            assignment, sub_ds, config.min_cluster_size, config.min_labeled_fraction, n_clusters=fact.k
        )
        n_unassigned = int(np.sum(assignment.cluster_of < 0))
        trace.unassigned += n_unassigned
        node.update(
            outcome="factorized",
            chosen_k=report.chosen_k,
            effective_k=fact.k,
            relative_error=fact.relative_error,
            rank_report=report.to_dict(),
            unassigned=n_unassigned,
            clusters=[],
        )
        for c, rec in enumerate(records):
            members = assignment.members(c)
            entry = {
                "cluster": c,
                "size": rec.total_count,
                "labeled": rec.labeled_count,
                "label_counts": _label_counts([dataset.labels[i] for i in idx[members]]),
            }
            if rec.total_count == 0:
                entry["disposition"] = "empty"
            elif rec.is_uniform:
                assert rec.majority_label in dataset.class_set
                columns.append(w[:, c])
                labels.append(rec.majority_label)
                metas.append(
                    {
                        "depth": depth,
                        "source_cluster_size": rec.total_count,
                        "mean_activation": float(assignment.confidence_of[members].mean()),
                    }
                )
                trace.archived += rec.total_count
                entry.update(disposition="archived", label=rec.majority_label, signature=len(columns) - 1)
            elif (
                depth + 1 <= config.max_depth
                and rec.total_count >= config.min_cluster_size
                and rec.total_count < idx.shape[0]
                and rec.labeled_count > 0
            ):
                queue.append((depth + 1, idx[members], node_id))
                entry["disposition"] = "recursed"
            else:
                trace.discarded += rec.total_count
                entry["disposition"] = "discarded"
            node["clusters"].append(entry)

    assert trace.archived + trace.discarded + trace.unassigned == trace.n_samples
    if not columns:
        raise BuildFailed("no class-uniform cluster was found; the archive is empty")
    archive = SignatureArchive(
        m_matrix=np.stack(columns, axis=1),
        signature_labels=labels,
        signature_meta=metas,
        class_set=list(dataset.class_set),
        build_config=config.to_dict(),
        metadata={"package_version": __version__, "n_training_samples": dataset.n_samples},
    )
    logger.info("archive built: K=%d, depth=%d", archive.n_signatures, trace.max_depth)
    return archive, trace


class _SubLabels:
    # minimal stand-in for LabeledDataset inside check_uniformity
    def __init__(self, labels):
        self.labels = labels


def _label_counts(labels) -> dict:
    out = {}
    for lab in labels:
        key = lab if lab is not None else ""
        out[key] = out.get(key, 0) + 1
    return dict(sorted(out.items()))


# --------------------------------------------------------------------------
# persistence


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _float_array(values) -> str:
    return "[" + ",".join(_fmt(v) for v in values) + "]"


def archive_to_json(archive: SignatureArchive) -> str:
    header = {
        "format_version": FORMAT_VERSION,
        "n": archive.feature_count,
        "K": archive.n_signatures,
        "class_set": list(archive.class_set),
        "build_config": archive.build_config,
        "metadata": archive.metadata,
    }
    parts = ["{", f'"header": {json.dumps(header, sort_keys=True)},']
    if archive.normalization is not None:
        p = archive.normalization
        parts.append(
            '"normalization": {'
            f'"clamp_sigmas": {_fmt(p.clamp_sigmas)}, '
            f'"mean": {_float_array(p.mean)}, '
            f'"std": {_float_array(p.std)}, '
            f'"post_shift": {_float_array(p.post_shift)}, '
            f'"post_scale": {_float_array(p.post_scale)}'
            "},"
        )
    sigs = []
    for j in range(archive.n_signatures):
        sigs.append(
            "{"
            f'"label": {json.dumps(archive.signature_labels[j])}, '
            f'"meta": {json.dumps(archive.signature_meta[j], sort_keys=True)}, '
            f'"values": {_float_array(archive.m_matrix[:, j])}'
            "}"
        )
    parts.append('"signatures": [\n' + ",\n".join(sigs) + "\n]")
    parts.append("}")
    return "\n".join(parts) + "\n"


def archive_from_json(text: str) -> SignatureArchive:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"archive is not valid JSON (truncated or corrupt): {exc}") from None
    try:
        header = doc["header"]
        version = header["format_version"]
    except (KeyError, TypeError):
        raise FormatError("archive lacks a header with format_version") from None
    if version != FORMAT_VERSION:
        raise FormatError(f"archive format version {version} is not supported (this build reads version {FORMAT_VERSION})")
    try:
        sigs = doc["signatures"]
        n, k = int(header["n"]), int(header["K"])
        if len(sigs) != k or any(len(s["values"]) != n for s in sigs):
            raise FormatError(f"header declares n={n}, K={k} but the signature payload disagrees")
        m = np.array([s["values"] for s in sigs], dtype=float).T.reshape(n, k)
        norm = doc.get("normalization")
        return SignatureArchive(
            m_matrix=m,
            signature_labels=[s["label"] for s in sigs],
            signature_meta=[s["meta"] for s in sigs],
            class_set=list(header["class_set"]),
            normalization=NormalizationParams.from_dict(norm) if norm is not None else None,
            build_config=header.get("build_config"),
            metadata=header.get("metadata", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed archive: {exc}") from None


def save_archive(archive: SignatureArchive, path) -> None:
    Path(path).write_text(archive_to_json(archive), encoding="utf-8")


def load_archive(path) -> SignatureArchive:
    return archive_from_json(Path(path).read_text(encoding="utf-8"))
