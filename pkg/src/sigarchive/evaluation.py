"""Evaluation of abstaining classifiers.

Per-class and averaged F1/precision/recall over accepted predictions,
rejection rates for known and novel samples, risk-coverage curves and the
area under them (AURC, lower is better). Risk is ``1 - macro F1``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import NOVEL
from .errors import AlignmentError, InvalidParameter

REJECT = "REJECT"
PENALIZE_NOVEL = "penalize"
EXCLUDE_NOVEL = "exclude"


@dataclass
class GroundTruthSet:
    sample_ids: list[str]
    true_labels: list[str]
    novel_marker: str = NOVEL

    def __post_init__(self):
        if len(self.sample_ids) != len(self.true_labels):
            raise AlignmentError("sample_ids and true_labels differ in length")
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise AlignmentError("duplicate sample ids in ground truth")

    def as_dict(self) -> dict[str, str]:
        return dict(zip(self.sample_ids, self.true_labels))


def save_truth_csv(truth: GroundTruthSet, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "label"])
        w.writerows(zip(truth.sample_ids, truth.true_labels))


def load_truth_csv(path, novel_marker: str = NOVEL) -> GroundTruthSet:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["sample_id", "label"]:
        raise AlignmentError(f"{path}: expected header sample_id,label")
    body = [r for r in rows[1:] if r]
    return GroundTruthSet([r[0] for r in body], [r[1] for r in body], novel_marker)


@dataclass
class ClassScores:
    precision: float | None
    recall: float | None
    f1: float | None
    support: int


@dataclass
class EvalReport:
    per_class: dict[str, ClassScores]
    macro_f1: float | None
    macro_precision: float | None
    macro_recall: float | None
    weighted_f1: float | None
    rejection_seen: float | None
    rejection_novel: float | None
    coverage: float
    n_known: int = 0
    n_novel: int = 0
    n_accepted: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_class"] = {k: asdict(v) for k, v in self.per_class.items()}
        return d


def _f1(p, r):
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def _prf(true, pred, novel_true=(), novel_pred=()):
    """Per-class scores over accepted pairs.

    ``novel_pred`` are labels predicted for accepted novel samples; they
    count as false positives for the predicted class.
    """
    classes = sorted(set(true) | set(pred) | set(novel_pred))
    out = {}
    for c in classes:
        tp = sum(1 for t, p in zip(true, pred) if t == c and p == c)
        n_pred = sum(1 for p in pred if p == c) + sum(1 for p in novel_pred if p == c)
        support = sum(1 for t in true if t == c)
        prec = tp / n_pred if n_pred else 0.0
        rec = tp / support if support else 0.0
        out[c] = ClassScores(prec, rec, _f1(prec, rec), support)
    return out


def _averages(per_class: dict[str, ClassScores]):
    scored = [s for s in per_class.values() if s.f1 is not None]
    if not scored:
        return None, None, None, None
    macro_p = float(np.mean([s.precision for s in scored]))
    macro_r = float(np.mean([s.recall for s in scored]))
    macro_f = float(np.mean([s.f1 for s in scored]))
    total = sum(s.support for s in scored)
    weighted = float(sum(s.f1 * s.support for s in scored) / total) if total else None
    return macro_f, macro_p, macro_r, weighted


def _align(predictions, truth: GroundTruthSet) -> list[tuple[str, str]]:
    """Return (true label, outcome) pairs in truth order."""
    if isinstance(predictions, dict):
        items = list(predictions.items())
    else:
        items = [(sid, getattr(p, "outcome", p)) for sid, p in predictions]
    pred = {}
    known = set(truth.sample_ids)
    for sid, outcome in items:
        if sid not in known:
            raise AlignmentError(f"prediction for unknown sample id {sid!r}")
        if sid in pred:
            raise AlignmentError(f"duplicate prediction for sample id {sid!r}")
        pred[sid] = outcome
    missing = [sid for sid in truth.sample_ids if sid not in pred]
    if missing:
        raise AlignmentError(f"no prediction for sample id {missing[0]!r}")
    return [(t, pred[sid]) for sid, t in zip(truth.sample_ids, truth.true_labels)]


def classification_metrics(predictions, truth: GroundTruthSet) -> EvalReport:
    """Abstaining-classifier report.

    ``predictions`` maps sample id to outcome (a label or ``"REJECT"``), as a
    dict or as ``(sample_id, outcome_or_Prediction)`` pairs. Novel samples
    only enter ``rejection_novel``; known samples enter the F1 scores when
    accepted and ``rejection_seen`` when rejected.
    """
    pairs = _align(predictions, truth)
    novel = truth.novel_marker
    known = [(t, p) for t, p in pairs if t != novel]
    novel_pairs = [(t, p) for t, p in pairs if t == novel]
    accepted = [(t, p) for t, p in known if p != REJECT]
    per_class = _prf([t for t, _ in accepted], [p for _, p in accepted])
    # known classes with no accepted sample are reported as absent
    for t, _ in known:
        if t not in per_class:
            per_class[t] = ClassScores(None, None, None, 0)
    per_class = dict(sorted(per_class.items()))
    macro_f, macro_p, macro_r, weighted = _averages(per_class)
    n_acc = sum(1 for _, p in pairs if p != REJECT)
    return EvalReport(
        per_class=per_class,
        macro_f1=macro_f,
        macro_precision=macro_p,
        macro_recall=macro_r,
        weighted_f1=weighted,
        rejection_seen=(sum(1 for _, p in known if p == REJECT) / len(known)) if known else None,
        rejection_novel=(sum(1 for _, p in novel_pairs if p == REJECT) / len(novel_pairs)) if novel_pairs else None,
        coverage=n_acc / len(pairs) if pairs else 0.0,
        n_known=len(known),
        n_novel=len(novel_pairs),
        n_accepted=n_acc,
    )


def apply_threshold(labels, confidences, threshold: float) -> list[str]:
    return [lab if c > threshold else REJECT for lab, c in zip(labels, confidences)]


# --------------------------------------------------------------------------
# risk-coverage


@dataclass
class RCPoint:
    threshold: float
    coverage: float
    risk: float


@dataclass
class RiskCoverageCurve:
    points: list[RCPoint]  # sorted by coverage ascending
    aurc: float
    novel_mode: str = PENALIZE_NOVEL

    def to_dict(self) -> dict:
        return {"aurc": self.aurc, "novel_mode": self.novel_mode, "points": [asdict(p) for p in self.points]}

    def to_csv(self) -> str:
        lines = ["threshold,coverage,risk"]
        lines += [f"{p.threshold!r},{p.coverage!r},{p.risk!r}" for p in self.points]
        return "\n".join(lines) + "\n"


def _selective_risk(true, pred, novel_marker, novel_mode):
    known_t, known_p, novel_p = [], [], []
    for t, p in zip(true, pred):
        if t == novel_marker:
            novel_p.append(p)
        else:
            known_t.append(t)
            known_p.append(p)
    if novel_mode == EXCLUDE_NOVEL:
        novel_p = []
    if not known_t and not novel_p:
        return None
    macro_f, *_ = _averages(_prf(known_t, known_p, novel_pred=novel_p))
    return 1.0 - macro_f


def threshold_grid(confidences, n_points: int = 512) -> np.ndarray:
    """Sorted unique confidences plus 0 and 1, thinned to ``n_points`` quantiles."""
    if n_points < 2:
        raise InvalidParameter("n_points must be >= 2")
    uniq = np.unique(np.clip(np.asarray(confidences, dtype=float), 0.0, 1.0))
    if uniq.shape[0] > n_points - 2:
        uniq = np.unique(np.quantile(uniq, np.linspace(0.0, 1.0, n_points - 2), method="nearest"))
    return np.unique(np.concatenate([[0.0], uniq, [1.0]]))


def risk_coverage_curve(
    confidences,
    predictions_at_zero_threshold,
    truth: GroundTruthSet,
    n_points: int = 512,
    novel_mode: str = PENALIZE_NOVEL,
) -> RiskCoverageCurve:
    """Sweep rejection thresholds and record (coverage, risk).

    A sample is accepted at threshold ``t`` when its confidence exceeds
    ``t``. Where nothing scoreable is accepted the risk is carried over
    from the next lower threshold.
    """
    conf = np.asarray(confidences, dtype=float)
    labels = list(predictions_at_zero_threshold)
    if conf.shape[0] != len(labels) or conf.shape[0] != len(truth.true_labels):
        raise AlignmentError(
            f"lengths differ: {conf.shape[0]} confidences, {len(labels)} labels, {len(truth.true_labels)} truths"
        )
    if novel_mode not in (PENALIZE_NOVEL, EXCLUDE_NOVEL):
        raise InvalidParameter(f"unknown novel_mode {novel_mode!r}")
    if conf.shape[0] == 0:
        raise AlignmentError("no samples")
    true = list(truth.true_labels)
    total = conf.shape[0]
    points = []
    last_risk = None
    prev_cov = math.inf
    for t in threshold_grid(conf, n_points):
        acc = np.flatnonzero(conf > t)
        cov = acc.shape[0] / total
        assert cov <= prev_cov, "coverage must not grow with the threshold"
        prev_cov = cov
        risk = _selective_risk([true[i] for i in acc], [labels[i] for i in acc], truth.novel_marker, novel_mode)
        if risk is None:
            risk = last_risk
        points.append(RCPoint(float(t), float(cov), risk))
        if risk is not None:
            last_risk = risk
    for p in points:
        if p.risk is None:
            p.risk = 0.0
    points.sort(key=lambda p: (p.coverage, -p.threshold))
    curve = RiskCoverageCurve(points=points, aurc=0.0, novel_mode=novel_mode)
    curve.aurc = aurc(curve) if any(p.coverage > 0 for p in points) else 0.0
    return curve


def aurc(curve) -> float:
    """Trapezoidal area under risk over coverage, divided by the covered span."""
    pts = curve.points if isinstance(curve, RiskCoverageCurve) else curve
    pts = [p if isinstance(p, RCPoint) else RCPoint(*p) for p in pts]
    if len(pts) < 2:
        raise InvalidParameter("AURC needs at least two points")
    pts = sorted(pts, key=lambda p: p.coverage)
    cov = np.array([p.coverage for p in pts])
    risk = np.array([p.risk for p in pts])
    span = cov[-1] - cov[0]
    if span <= 0:
        return float(risk.mean())
    area = float(np.sum(np.diff(cov) * (risk[1:] + risk[:-1]) / 2.0))
    return float(np.clip(area / span, 0.0, 1.0))


def mean_ci(values, level: float = 0.95) -> tuple[float, float]:
    """Mean and half-width of a Student-t confidence interval."""
    from scipy import stats

    v = np.asarray(values, dtype=float)
    if v.shape[0] < 2:
        return float(v.mean()), 0.0
    half = stats.t.ppf(0.5 + level / 2, v.shape[0] - 1) * v.std(ddof=1) / np.sqrt(v.shape[0])
    return float(v.mean()), float(half)


def write_curve_csv(curve: RiskCoverageCurve, path) -> None:
    Path(path).write_text(curve.to_csv(), encoding="utf-8")


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]


def render_rc_svg(curves: dict[str, RiskCoverageCurve], title: str = "Risk-coverage") -> str:
    """A self-contained SVG line plot of one or more RC curves."""
    width, height, pad = 480, 360, 50
    pw, ph = width - 2 * pad, height - 2 * pad

    def xy(c, r):
        return pad + c * pw, pad + (1.0 - r) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{pad}" y="{pad}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<text x="{width / 2}" y="{pad / 2}" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle" font-size="12">coverage</text>',
        f'<text x="15" y="{height / 2}" text-anchor="middle" font-size="12" transform="rotate(-90 15 {height / 2})">risk</text>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        x, _ = xy(tick, 0)
        _, y = xy(0, tick)
        out.append(f'<text x="{x:.1f}" y="{pad + ph + 15}" text-anchor="middle" font-size="10">{tick:g}</text>')
        out.append(f'<text x="{pad - 5}" y="{y + 3:.1f}" text-anchor="end" font-size="10">{tick:g}</text>')
    for i, (name, curve) in enumerate(curves.items()):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join("{:.2f},{:.2f}".format(*xy(p.coverage, p.risk)) for p in curve.points)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        out.append(
            f'<text x="{pad + 10}" y="{pad + 18 + 16 * i}" font-size="11" fill="{color}">'
            f"{name} (AURC {curve.aurc:.3f})</text>"
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"
