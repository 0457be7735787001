"""Feature tables: CSV ingestion, outlier-clamping normalization, trial
sampling and a synthetic generator with planted signatures."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    DegenerateInput,
    DimensionMismatch,
    InvalidParameter,
    ParseError,
    SeparationUnreachable,
)

NOVEL = "NOVEL"


@dataclass
class FeatureTable:
    """Rows are samples; ``values`` has shape (m, n_features)."""

    header: list[str]
    sample_ids: list[str]
    labels: list[str | None]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.sample_ids), len(self.header))
        if len(set(self.header)) != len(self.header):
            raise ParseError("duplicate feature names")
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise ParseError("duplicate sample ids")
        if len(self.labels) != len(self.sample_ids):
            raise DimensionMismatch("labels and sample ids differ in length")

    def __len__(self):
        return len(self.sample_ids)

    @property
    def n_features(self) -> int:
        return len(self.header)

    def subset(self, rows) -> "FeatureTable":
        rows = list(rows)
        return FeatureTable(
            header=list(self.header),
            sample_ids=[self.sample_ids[i] for i in rows],
            labels=[self.labels[i] for i in rows],
            values=self.values[rows],
        )


def load_feature_csv(path) -> FeatureTable:
    """Read ``sample_id,label,<features...>``; an empty label means unlabeled."""
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            head = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file", row=1) from None
        if len(head) < 3 or head[0] != "sample_id" or head[1] != "label":
            raise ParseError(f"{path}: header must start with sample_id,label and name at least one feature", row=1)
        features = head[2:]
        if len(set(features)) != len(features):
            raise ParseError(f"{path}: duplicate feature names in header", row=1)
        ids, labels, rows = [], [], []
        seen = set()
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(head):
                raise ParseError(f"{path}: row {lineno} has {len(rec)} fields, expected {len(head)}", row=lineno)
            sid = rec[0]
            if sid in seen:
                raise ParseError(f"{path}: duplicate sample_id {sid!r} at row {lineno}", row=lineno, column=1)
            seen.add(sid)
            vals = []
            for col, cell in enumerate(rec[2:], start=3):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}: non-numeric value {cell!r} at row {lineno}, column {col} ({head[col - 1]})",
                        row=lineno,
                        column=col,
                    ) from None
                if not math.isfinite(v):
                    raise ParseError(f"{path}: non-finite value at row {lineno}, column {col}", row=lineno, column=col)
                vals.append(v)
            ids.append(sid)
            labels.append(rec[1] or None)
            rows.append(vals)
    values = np.array(rows, dtype=float).reshape(len(rows), len(features))
    return FeatureTable(header=features, sample_ids=ids, labels=labels, values=values)


def save_feature_csv(table: FeatureTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "label", *table.header])
        for sid, lab, row in zip(table.sample_ids, table.labels, table.values):
            writer.writerow([sid, lab or "", *(repr(float(v)) for v in row)])


@dataclass
class NormalizationParams:
    mean: np.ndarray
    std: np.ndarray
    clamp_sigmas: float = 3.0
    post_shift: np.ndarray | None = None
    post_scale: np.ndarray | None = None

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.std = np.asarray(self.std, dtype=float)
        n = self.mean.shape[0]
        if self.post_shift is None:
            self.post_shift = np.full(n, self.clamp_sigmas)
        if self.post_scale is None:
            self.post_scale = np.full(n, 1.0 / (2.0 * self.clamp_sigmas))
        self.post_shift = np.asarray(self.post_shift, dtype=float)
        self.post_scale = np.asarray(self.post_scale, dtype=float)
        if np.any(self.std < 0) or np.any(self.post_scale <= 0):
            raise InvalidParameter("std must be >= 0 and post_scale > 0")

    @property
    def n_features(self) -> int:
        return self.mean.shape[0]

    def to_dict(self) -> dict:
        return {
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "clamp_sigmas": float(self.clamp_sigmas),
            "post_shift": [float(v) for v in self.post_shift],
            "post_scale": [float(v) for v in self.post_scale],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationParams":
        return cls(**d)


def _transform(params: NormalizationParams, values: np.ndarray) -> np.ndarray:
    safe = np.where(params.std > 0, params.std, 1.0)
    z = np.where(params.std > 0, (values - params.mean) / safe, 0.0)
    c = params.clamp_sigmas
    z = np.clip(z, -c, c)
    return np.clip((z + params.post_shift) * params.post_scale, 0.0, 1.0)


AFFINE = "affine"
SHIFT = "shift"
NORMALIZATION_MODES = (AFFINE, SHIFT)


def normalize(table: FeatureTable, mode: str = AFFINE) -> tuple[np.ndarray, NormalizationParams]:
    """Z-score each feature, clamp to +-3 sigma and map onto [0, 1].

    ``mode="affine"`` maps the clamped z-score through ``(z + 3) / 6``, so
    the feature mean lands on 0.5. ``mode="shift"`` instead moves each
    feature's smallest training value to 0 and the upper clamp to 1; a
    sparse count feature keeps its zeros, which matters for NMF because a
    constant offset on every feature is itself a dense latent pattern.

    Returns the (n_features, m) matrix, samples as columns, and the fitted
    parameters.
    """
    if mode not in NORMALIZATION_MODES:
        raise InvalidParameter(f"unknown normalization mode {mode!r}; expected one of {NORMALIZATION_MODES}")
    if len(table) == 0 or table.n_features == 0:
        raise DegenerateInput("empty table")
    if len(table) < 2:
        raise DegenerateInput("normalization needs at least two rows")
    params = NormalizationParams(mean=table.values.mean(axis=0), std=table.values.std(axis=0))
    if mode == SHIFT:
        c = params.clamp_sigmas
        safe = np.where(params.std > 0, params.std, 1.0)
        z = np.where(params.std > 0, (table.values - params.mean) / safe, 0.0)
        low = np.clip(z, -c, c).min(axis=0)
        span = c - low
        params.post_shift = -low
        params.post_scale = np.where(span > 0, 1.0 / np.where(span > 0, span, 1.0), 1.0)
    return _transform(params, table.values).T.copy(), params


def apply_normalization(params: NormalizationParams, row) -> np.ndarray:
    """Apply train-time parameters to one raw row, or to a 2-D block of rows
    (in which case the result has samples as columns)."""
    row = np.asarray(row, dtype=float)
    if row.shape[-1] != params.n_features:
        raise DimensionMismatch(f"row has {row.shape[-1]} features, parameters expect {params.n_features}")
    out = _transform(params, row)
    return out.T.copy() if out.ndim == 2 else out


# --------------------------------------------------------------------------
# trial sampling


@dataclass(frozen=True)
class RareFamily:
    label: str
    keep_fraction: float


@dataclass
class TrialConfig:
    families: list[str]
    novel_family: str | None = None
    rare_families: list[RareFamily] = field(default_factory=list)
    test_fraction: float = 0.1
    n_trials: int = 10
    seed: int = 0

    def __post_init__(self):
        self.rare_families = [r if isinstance(r, RareFamily) else RareFamily(**r) for r in self.rare_families]
        self.validate()

    def validate(self):
        if not self.families:
            raise ConfigError("families must not be empty", field="families")
        if len(set(self.families)) != len(self.families):
            raise ConfigError("duplicate family names", field="families")
        if self.novel_family is not None and self.novel_family not in self.families:
            raise ConfigError(f"novel family {self.novel_family!r} not among families", field="novel_family")
        for r in self.rare_families:
            if r.label not in self.families:
                raise ConfigError(f"rare family {r.label!r} not among families", field="rare_families")
            if r.label == self.novel_family:
                raise ConfigError("the novel family cannot also be rare", field="rare_families")
            if not 0.0 < r.keep_fraction <= 1.0:
                raise ConfigError(f"keep_fraction for {r.label!r} must lie in (0, 1]", field="rare_families")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)", field="test_fraction")
        if self.n_trials < 1:
            raise ConfigError("n_trials must be positive", field="n_trials")


@dataclass
class TrialSplit:
    train: FeatureTable
    test: FeatureTable
    truth: "GroundTruthSet"
    manifest: dict


def sample_trial(table: FeatureTable, config: TrialConfig, trial_index: int) -> TrialSplit:
    """Draw one train/test split.

    The novel family goes entirely to the test set and is marked NOVEL in
    the ground truth. Rare families are down-sampled before the split.
    Rows whose label is not a configured family are ignored.
    """
    from .evaluation import GroundTruthSet

    present = set(lab for lab in table.labels if lab is not None)
    missing = [f for f in config.families if f not in present]
    if missing:
        raise ConfigError(f"unknown families (absent from table): {missing}", field="families")
    rng = np.random.default_rng([int(config.seed), int(trial_index)])
    keep = {r.label: r.keep_fraction for r in config.rare_families}
    labels = np.array([lab if lab is not None else "" for lab in table.labels], dtype=object)

    train_rows, test_rows = [], []
    counts = {}
    for fam in config.families:
        rows = np.flatnonzero(labels == fam)
        rows = rows[rng.permutation(rows.shape[0])]
        if fam == config.novel_family:
            test_rows.extend(rows.tolist())
            counts[fam] = {"available": int(rows.shape[0]), "kept": int(rows.shape[0]), "train": 0, "test": int(rows.shape[0])}
            continue
        n_keep = max(1, int(round(keep.get(fam, 1.0) * rows.shape[0])))
        rows = rows[:n_keep]
        n_test = int(round(config.test_fraction * n_keep))
        test_rows.extend(rows[:n_test].tolist())
        train_rows.extend(rows[n_test:].tolist())
        counts[fam] = {"available": int(len(labels[labels == fam])), "kept": n_keep, "train": n_keep - n_test, "test": n_test}

    train_rows.sort()
    test_rows.sort()
    train = table.subset(train_rows)
    test = table.subset(test_rows)
    truth_labels = [NOVEL if lab == config.novel_family else lab for lab in test.labels]
    truth = GroundTruthSet(sample_ids=list(test.sample_ids), true_labels=truth_labels)
    manifest = {"seed": int(config.seed), "trial_index": int(trial_index), "per_family": counts}
    return TrialSplit(train=train, test=test, truth=truth, manifest=manifest)


def write_trial(split: TrialSplit, out_dir) -> None:
    """Persist a split as train.csv, test.csv, truth.csv and manifest.json."""
    from .evaluation import save_truth_csv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_feature_csv(split.train, out / "train.csv")
    save_feature_csv(split.test, out / "test.csv")
    save_truth_csv(split.truth, out / "truth.csv")
    (out / "manifest.json").write_text(json.dumps(split.manifest, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class FamilySpec:
    label: str
    n_signatures: int
    n_samples: int


@dataclass
class SyntheticData:
    table: FeatureTable
    signatures: dict[str, np.ndarray]  # label -> (n_features, n_signatures)
    novel: str | None = None

    def planted_truth(self) -> dict:
        return {
            "novel": self.novel,
            "signatures": {k: v.T.tolist() for k, v in self.signatures.items()},
        }


def draw_separated_signatures(
    n_features: int,
    count: int,
    rng: np.random.Generator,
    max_cosine: float = 0.5,
    sparsity: float = 0.5,
    max_attempts: int = 2000,
    existing: list[np.ndarray] | None = None,
) -> list[np.ndarray]:
    """Rejection-sample nonnegative unit vectors with pairwise cosine <= max_cosine.

    Entries are Gamma(sparsity) draws, so small shapes give peaky vectors
    that are easy to separate.
    """
    out = list(existing or [])
    new = []
    for _ in range(count):
        for _attempt in range(max_attempts):
            v = rng.gamma(sparsity, size=n_features)
            norm = np.linalg.norm(v)
            if norm == 0:
                continue
            v /= norm
            if all(v @ u <= max_cosine for u in out):
                out.append(v)
                new.append(v)
                break
        else:
            raise SeparationUnreachable(
                f"could not draw {count} signatures in {n_features} dimensions "
                f"with pairwise cosine <= {max_cosine}"
            )
    return new


def generate_synthetic(
    n_features: int,
    families,
    noise: float = 0.01,
    novel: str | None = None,
    seed: int = 0,
    *,
    max_cosine: float = 0.5,
    sparsity: float = 0.5,
    concentration: float = 0.3,
    scale_range: tuple[float, float] = (0.5, 2.0),
    core_weight: float = 0.0,
    novel_overlap: float = 0.0,
) -> SyntheticData:
    """Draw a labeled table whose families are generated by planted signatures.

    Each sample is a Dirichlet(``concentration``) mixture of its family's
    signatures, times a uniform scale, times ``1 + U[-noise, noise]``
    elementwise.

    With ``core_weight > 0`` every family first draws a core pattern and
    each of its signatures becomes ``core_weight * core + (1 - core_weight)
    * private`` (renormalized), so signatures of one family resemble each
    other the way variants of a malware family do. Cores and private parts
    all respect ``max_cosine``.

    With ``novel_overlap > 0`` the novel family reuses code from the known
    ones: its i-th signature becomes ``novel_overlap * known_i + (1 -
    novel_overlap) * own_i`` (renormalized), where ``known_i`` cycles
    through the first signature of each known family in order.
    """
    fams = [f if isinstance(f, FamilySpec) else FamilySpec(**f) for f in families]
    if n_features < 1 or not fams:
        raise InvalidParameter("n_features and families must be positive")
    if not 0.0 <= noise <= 0.2:
        raise InvalidParameter(f"noise must lie in [0, 0.2], got {noise}")
    if any(f.n_signatures < 1 or f.n_samples < 1 for f in fams):
        raise InvalidParameter("every family needs positive n_signatures and n_samples")
    if len(set(f.label for f in fams)) != len(fams):
        raise InvalidParameter("duplicate family labels")
    if novel is not None and novel not in {f.label for f in fams}:
        raise InvalidParameter(f"novel family {novel!r} is not among the families")
    lo, hi = scale_range
    if not 0 < lo <= hi:
        raise InvalidParameter("scale_range must be positive and ordered")

    if not 0.0 <= core_weight < 1.0:
        raise InvalidParameter(f"core_weight must lie in [0, 1), got {core_weight}")
    if not 0.0 <= novel_overlap < 1.0:
        raise InvalidParameter(f"novel_overlap must lie in [0, 1), got {novel_overlap}")

    rng = np.random.default_rng(seed)
    drawn: list[np.ndarray] = []
    signatures = {}
    for f in fams:
        if core_weight > 0:
            core = draw_separated_signatures(n_features, 1, rng, max_cosine, sparsity, existing=drawn)[0]
            drawn.append(core)
        new = draw_separated_signatures(n_features, f.n_signatures, rng, max_cosine, sparsity, existing=drawn)
        drawn.extend(new)
        if core_weight > 0:
            new = [core_weight * core + (1.0 - core_weight) * v for v in new]
            new = [v / np.linalg.norm(v) for v in new]
        signatures[f.label] = np.stack(new, axis=1)
    if novel is not None and novel_overlap > 0:
        donors = [signatures[f.label][:, 0] for f in fams if f.label != novel]
        if donors:
            own = signatures[novel]
            mixed = [
                novel_overlap * donors[i % len(donors)] + (1.0 - novel_overlap) * own[:, i]
                for i in range(own.shape[1])
            ]
            signatures[novel] = np.stack([v / np.linalg.norm(v) for v in mixed], axis=1)

    ids, labels, rows = [], [], []
    width = len(str(sum(f.n_samples for f in fams)))
    counter = 0
    for f in fams:
        sig = signatures[f.label]
        weights = rng.dirichlet(np.full(f.n_signatures, concentration), size=f.n_samples) if f.n_signatures > 1 else np.ones((f.n_samples, 1))
        scales = rng.uniform(lo, hi, size=f.n_samples)
        clean = (weights * scales[:, None]) @ sig.T
        if noise > 0:
            clean = clean * (1.0 + rng.uniform(-noise, noise, size=clean.shape))
        for row in clean:
            ids.append(f"s{counter:0{width}d}")
            labels.append(f.label)
            rows.append(row)
            counter += 1
    header = [f"f{i:03d}" for i in range(n_features)]
    table = FeatureTable(header=header, sample_ids=ids, labels=labels, values=np.array(rows))
    return SyntheticData(table=table, signatures=signatures, novel=novel)
