"""Declarative run configuration for the command-line tools.

A run config is a single JSON document. Every section is optional; unknown
keys anywhere are rejected with a :class:`ConfigError` naming the offending
path. Command-line flags (``--seed``, ``--threads``) override the
corresponding config keys.

Example::

    {
      "seed": 7,
      "threads": 2,
      "build": {"tau": 0.6, "normalization": "shift", "rank": {"k_max": 10}},
      "inference": {"metric": "ensemble_voting", "threshold": 0.5},
      "evaluation": {"novel_mode": "penalize"},
      "synth": {"n_features": 100, "families": [{"label": "A", "n_signatures": 2, "n_samples": 300}]},
      "trial": {"families": ["A"], "test_fraction": 0.2}
    }
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .archive import BuildConfig
from .data import NORMALIZATION_MODES, SHIFT, FamilySpec, TrialConfig
from .errors import ConfigError, SigArchiveError
from .evaluation import EXCLUDE_NOVEL, PENALIZE_NOVEL
from .inference import METRICS, PROJECTION, AugmentationConfig, MetricParams
from .rank import EnsembleConfig


@dataclass
class InferenceSettings:
    metric: str = PROJECTION
    threshold: float = 0.5
    vote_threshold: float = 0.5
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)

    def params(self) -> MetricParams:
        return MetricParams(vote_threshold=self.vote_threshold, augmentation=self.augmentation)


@dataclass
class EvaluationSettings:
    novel_mode: str = PENALIZE_NOVEL
    n_points: int = 512


@dataclass
class SynthSettings:
    n_features: int = 100
    families: list[FamilySpec] = field(
        default_factory=lambda: [FamilySpec("A", 2, 200), FamilySpec("B", 2, 200)]
    )
    noise: float = 0.01
    novel: str | None = None
    max_cosine: float = 0.5
    sparsity: float = 0.5
    concentration: float = 0.3
    scale_range: tuple[float, float] = (0.5, 2.0)
    core_weight: float = 0.0
    novel_overlap: float = 0.0


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1
    output_dir: str | None = None
    normalization: str = SHIFT
    build: BuildConfig = field(default_factory=BuildConfig)
    inference: InferenceSettings = field(default_factory=InferenceSettings)
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)
    synth: SynthSettings = field(default_factory=SynthSettings)
    trial: TrialConfig | None = None

    def with_overrides(self, seed: int | None = None, threads: int | None = None) -> "RunConfig":
        cfg = dataclasses.replace(self)
        if seed is not None:
            cfg.seed = int(seed)
        if threads is not None:
            cfg.threads = int(threads)
        cfg._propagate()
        return cfg

    def _propagate(self):
        # the global seed and thread cap reach every seeded component
        rc = dataclasses.replace(self.build.rank_config, nmf_seed=self.seed, max_workers=self.threads)
        self.build = dataclasses.replace(self.build, rank_config=rc, seed=self.seed)
        self.inference = dataclasses.replace(
            self.inference, augmentation=dataclasses.replace(self.inference.augmentation, seed=self.seed)
        )
        if self.trial is not None:
            self.trial = dataclasses.replace(self.trial, seed=self.seed)

    def validate(self) -> None:
        if self.threads < 1:
            raise ConfigError("threads must be >= 1", field="threads")
        if self.normalization not in (*NORMALIZATION_MODES, "none"):
            raise ConfigError(
                f"normalization must be one of {', '.join(NORMALIZATION_MODES)}, none", field="build.normalization"
            )
        _wrap("build", self.build.validate)
        _wrap("inference.augmentation", self.inference.augmentation.validate)
        if self.inference.metric not in METRICS:
            raise ConfigError(f"metric must be one of {', '.join(METRICS)}", field="inference.metric")
        if not 0.0 <= self.inference.threshold <= 1.0:
            raise ConfigError("threshold must lie in [0, 1]", field="inference.threshold")
        if not 0.0 <= self.inference.vote_threshold <= 1.0:
            raise ConfigError("vote_threshold must lie in [0, 1]", field="inference.vote_threshold")
        if self.evaluation.novel_mode not in (PENALIZE_NOVEL, EXCLUDE_NOVEL):
            raise ConfigError(
                f"novel_mode must be {PENALIZE_NOVEL!r} or {EXCLUDE_NOVEL!r}", field="evaluation.novel_mode"
            )
        if self.evaluation.n_points < 2:
            raise ConfigError("n_points must be >= 2", field="evaluation.n_points")


def _wrap(section: str, fn) -> None:
    try:
        fn()
    except ConfigError:
        raise
    except SigArchiveError as exc:
        raise ConfigError(f"{section}: {exc}", field=section) from None


# --------------------------------------------------------------------------
# parsing


def _check_keys(doc, allowed, path: str) -> None:
    if not isinstance(doc, dict):
        raise ConfigError(f"{path or 'config'} must be a JSON object", field=path or None)
    for key in doc:
        if key not in allowed:
            where = f"{path}.{key}" if path else key
            raise ConfigError(f"unknown config key {where!r}", field=where)


def _typed(value, kind, path):
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path} must be a boolean", field=path)
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path} must be an integer", field=path)
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path} must be a number", field=path)
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path} must be a string", field=path)
        return value
    return value


_BUILD_KEYS = {
    "tau": float,
    "max_depth": int,
    "min_cluster_size": int,
    "min_labeled_fraction": float,
    "nmf_max_iters": int,
    "nmf_tol": float,
    "normalization": str,
}
_RANK_KEYS = {
    "k_min": int,
    "k_max": int,
    "n_perturbations": int,
    "noise_magnitude": float,
    "nmf_max_iters": int,
    "nmf_tol": float,
    "nmf_inner_iters": int,
    "silhouette_threshold": float,
    "error_tolerance": float,
}
_AUG_KEYS = {"p": int, "epsilon_norm": float, "n_bootstrap": int}
_INFERENCE_KEYS = {"metric": str, "threshold": float, "vote_threshold": float, "augmentation": dict}
_EVAL_KEYS = {"novel_mode": str, "n_points": int}
_SYNTH_KEYS = {
    "n_features": int,
    "families": list,
    "noise": float,
    "novel": str,
    "max_cosine": float,
    "sparsity": float,
    "concentration": float,
    "scale_range": list,
    "core_weight": float,
    "novel_overlap": float,
}
_TRIAL_KEYS = {
    "families": list,
    "novel_family": str,
    "rare_families": list,
    "test_fraction": float,
    "n_trials": int,
}
_TOP_KEYS = {
    "seed": int,
    "threads": int,
    "output_dir": str,
    "build": dict,
    "inference": dict,
    "evaluation": dict,
    "synth": dict,
    "trial": dict,
}


def _section(doc, schema, path) -> dict:
    _check_keys(doc, schema, path)
    return {k: _typed(v, schema[k], f"{path}.{k}" if path else k) for k, v in doc.items()}


def parse_config(doc: dict) -> RunConfig:
    """Build a validated :class:`RunConfig` from a decoded JSON document."""
    top = _section(doc, _TOP_KEYS, "")
    cfg = RunConfig()
    cfg.seed = top.get("seed", cfg.seed)
    cfg.threads = top.get("threads", cfg.threads)
    cfg.output_dir = top.get("output_dir")

    if "build" in top:
        raw = dict(top["build"])
        rank_doc = raw.pop("rank", {})
        b = _section(raw, _BUILD_KEYS, "build")
        cfg.normalization = b.pop("normalization", cfg.normalization)
        r = _section(rank_doc, _RANK_KEYS, "build.rank")
        cfg.build = BuildConfig(rank_config=EnsembleConfig(**r), **b)

    if "inference" in top:
        raw = dict(top["inference"])
        aug_doc = raw.pop("augmentation", {})
        i = _section(raw, _INFERENCE_KEYS, "inference")
        a = _section(aug_doc, _AUG_KEYS, "inference.augmentation")
        cfg.inference = InferenceSettings(augmentation=AugmentationConfig(**a), **i)

    if "evaluation" in top:
        cfg.evaluation = EvaluationSettings(**_section(top["evaluation"], _EVAL_KEYS, "evaluation"))

    if "synth" in top:
        s = _section(top["synth"], _SYNTH_KEYS, "synth")
        if "families" in s:
            fams = []
            for j, f in enumerate(s["families"]):
                path = f"synth.families[{j}]"
                schema = _section(f, {"label": str, "n_signatures": int, "n_samples": int}, path)
                missing = {"label", "n_signatures", "n_samples"} - set(schema)
                if missing:
                    raise ConfigError(f"{path} lacks {sorted(missing)}", field=path)
                fams.append(FamilySpec(**schema))
            s["families"] = fams
        if "scale_range" in s:
            if len(s["scale_range"]) != 2:
                raise ConfigError("scale_range must have two entries", field="synth.scale_range")
            s["scale_range"] = tuple(float(v) for v in s["scale_range"])
        cfg.synth = SynthSettings(**s)

    if "trial" in top:
        t = _section(top["trial"], _TRIAL_KEYS, "trial")
        rare = []
        for j, r in enumerate(t.pop("rare_families", [])):
            rare.append(_section(r, {"label": str, "keep_fraction": float}, f"trial.rare_families[{j}]"))
        if "families" not in t:
            raise ConfigError("trial.families is required", field="trial.families")
        try:
            cfg.trial = TrialConfig(rare_families=rare, **t)
        except TypeError as exc:
            raise ConfigError(f"trial: {exc}", field="trial") from None
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}", field=None) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    try:
        return parse_config(doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
