"""Command-line interface: ``sigarchive <command> ...``.

Commands
--------
build       factorize a labeled training CSV into a signature archive
classify    classify a feature CSV against an archive, one JSON line per sample
evaluate    score a predictions file against a ground-truth CSV
rc-curve    sweep the rejection threshold and write a risk-coverage curve
synth       generate a synthetic feature CSV with planted signatures
split       draw a train/test trial split from a feature CSV

Every command accepts ``--config``, ``--seed``, ``--threads`` and
``--verbose``. Flags take precedence over the config file, which takes
precedence over built-in defaults.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or
arguments. Failures print a single ``error: <kind>: <message>`` line on
stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from collections import Counter
from pathlib import Path

from . import __version__
from .archive import LabeledDataset, build_archive, load_archive, save_archive
from .config import RunConfig, load_config
from .data import (
    NOVEL,
    FamilySpec,
    apply_normalization,
    generate_synthetic,
    load_feature_csv,
    normalize,
    sample_trial,
    save_feature_csv,
    write_trial,
)
from .errors import AlignmentError, ConfigError, DimensionMismatch, InvalidParameter, SigArchiveError
from .evaluation import (
    REJECT,
    GroundTruthSet,
    classification_metrics,
    load_truth_csv,
    render_rc_svg,
    risk_coverage_curve,
    write_json,
)
from .inference import METRICS, classify_batch, predict_batch

logger = logging.getLogger("sigarchive")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits on its own; route usage errors through our error line
    def error(self, message):
        raise _UsageError(message)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--seed", type=int, help="global seed (overrides the config)")
    p.add_argument("--threads", type=int, help="parallelism cap (overrides the config)")
    p.add_argument("--verbose", action="store_true", help="log progress to stderr")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="sigarchive", description="Latent-signature archive classifier with a reject option.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build", parents=[common], help="build a signature archive from a training CSV")
    p.add_argument("train_csv", type=Path)
    p.add_argument("archive", type=Path, help="output archive JSON")
    p.add_argument("--trace", type=Path, help="BuildTrace JSON (default: <archive>.trace.json)")
    p.add_argument("--ranks", type=Path, help="rank-selection reports JSON (default: <archive>.ranks.json)")

    p = sub.add_parser("classify", parents=[common], help="classify samples against an archive")
    p.add_argument("archive", type=Path)
    p.add_argument("test_csv", type=Path)
    p.add_argument("out_jsonl", type=Path)
    p.add_argument("--metric", choices=METRICS)
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("evaluate", parents=[common], help="score predictions against ground truth")
    p.add_argument("predictions", type=Path, help="JSON-lines file written by classify")
    p.add_argument("truth_csv", type=Path)
    p.add_argument("out_json", type=Path)

    p = sub.add_parser("rc-curve", parents=[common], help="risk-coverage curve and AURC")
    p.add_argument("archive", type=Path)
    p.add_argument("test_csv", type=Path)
    p.add_argument("out_csv", type=Path)
    p.add_argument("out_svg", type=Path)
    p.add_argument(
        "--metric",
        action="append",
        choices=METRICS,
        help="confidence metric; repeat to overlay several curves (default: the config's metric)",
    )
    p.add_argument("--truth", type=Path, help="ground-truth CSV (default: labels of test_csv, unknown ones NOVEL)")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic feature CSV")
    p.add_argument("out_csv", type=Path)
    p.add_argument("--planted", type=Path, help="planted-truth JSON (default: <out_csv>.planted.json)")
    p.add_argument("--n-features", type=int)
    p.add_argument("--families", help="comma-separated LABEL:N_SIGNATURES:N_SAMPLES entries")
    p.add_argument("--noise", type=float)
    p.add_argument("--novel", help="label of the family to mark as novel in the planted truth")

    p = sub.add_parser("split", parents=[common], help="draw a train/test trial from a feature CSV")
    p.add_argument("table_csv", type=Path)
    p.add_argument("out_dir", type=Path)
    p.add_argument("--trial", type=int, default=0, help="trial index (default 0)")
    return parser


# --------------------------------------------------------------------------
# helpers


def _sidecar(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = cfg.with_overrides(seed=args.seed, threads=args.threads)
    cfg.validate()
    return cfg


def _out(cfg: RunConfig, path: Path) -> Path:
    if cfg.output_dir and not path.is_absolute():
        path = Path(cfg.output_dir) / path
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _test_matrix(archive, table):
    if table.n_features != archive.feature_count:
        raise DimensionMismatch(
            f"feature count mismatch: test table has {table.n_features} features, archive expects {archive.feature_count}"
        )
    if archive.normalization is not None:
        return apply_normalization(archive.normalization, table.values).reshape(archive.feature_count, len(table))
    return table.values.T.copy()


# --------------------------------------------------------------------------
# commands


def cmd_build(args, cfg: RunConfig) -> int:
    table = load_feature_csv(args.train_csv)
    if cfg.normalization == "none":
        params = None
        matrix = table.values.T.copy()
    else:
        matrix, params = normalize(table, cfg.normalization)
    dataset = LabeledDataset(matrix, list(table.sample_ids), list(table.labels))
    archive, trace = build_archive(dataset, cfg.build)
    archive.normalization = params
    archive.metadata["normalization_mode"] = cfg.normalization
    archive.metadata["feature_names"] = list(table.header)

    out = _out(cfg, args.archive)
    save_archive(archive, out)
    trace_path = _out(cfg, args.trace or _sidecar(args.archive, ".trace.json"))
    ranks_path = _out(cfg, args.ranks or _sidecar(args.archive, ".ranks.json"))
    reports = [
        {"node_id": n["node_id"], "depth": n["depth"], **n["rank_report"]} for n in trace.nodes if "rank_report" in n
    ]
    trace_doc = trace.to_dict()
    trace_doc["nodes"] = [{k: v for k, v in n.items() if k != "rank_report"} for n in trace.nodes]
    trace_path.write_text(_dump(trace_doc), encoding="utf-8")
    ranks_path.write_text(_dump(reports), encoding="utf-8")

    per_class = Counter(archive.signature_labels)
    print(
        f"archive {out}: K={archive.n_signatures} signatures over {len(per_class)} classes, "
        f"depth {trace.max_depth}; samples archived={trace.archived} discarded={trace.discarded} "
        f"unassigned={trace.unassigned}"
    )
    print("signatures per class: " + ", ".join(f"{c}={per_class.get(c, 0)}" for c in archive.class_set))
    return EXIT_OK


def cmd_classify(args, cfg: RunConfig) -> int:
    metric = args.metric or cfg.inference.metric
    threshold = cfg.inference.threshold if args.threshold is None else args.threshold
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError("threshold must lie in [0, 1]", field="threshold")
    archive = load_archive(args.archive)
    table = load_feature_csv(args.test_csv)
    matrix = _test_matrix(archive, table)
    preds = classify_batch(archive, matrix, metric, threshold, cfg.inference.params(), max_workers=cfg.threads)
    out = _out(cfg, args.out_jsonl)
    with open(out, "w", encoding="utf-8") as fh:
        for sid, p in zip(table.sample_ids, preds):
            fh.write(p.to_json(sid, verbose=args.verbose) + "\n")
    counts = Counter(p.outcome for p in preds)
    accepted = sum(v for k, v in counts.items() if k != REJECT)
    coverage = accepted / len(preds) if preds else 0.0
    labels = ", ".join(f"{k}={counts[k]}" for k in sorted(counts))
    print(f"classified {len(preds)} samples with {metric} at threshold {threshold:g}: coverage {coverage:.4f} ({labels})")
    return EXIT_OK


def _read_predictions(path: Path) -> list[tuple[str, str]]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                pairs.append((rec["sample_id"], rec["outcome"]))
            except (json.JSONDecodeError, KeyError, TypeError):
                raise AlignmentError(f"{path}: line {lineno} is not a prediction record") from None
    if not pairs:
        raise AlignmentError(f"{path}: no predictions")
    return pairs


def _pct(v):
    return "n/a" if v is None else f"{100 * v:.2f}%"


def _num(v):
    return "n/a" if v is None else f"{v:.4f}"


def cmd_evaluate(args, cfg: RunConfig) -> int:
    pairs = _read_predictions(args.predictions)
    truth = load_truth_csv(args.truth_csv)
    report = classification_metrics(pairs, truth)
    write_json(report.to_dict(), _out(cfg, args.out_json))
    print(f"{'class':<16}{'precision':>10}{'recall':>10}{'f1':>10}{'support':>9}")
    for c, s in report.per_class.items():
        print(f"{c:<16}{_num(s.precision):>10}{_num(s.recall):>10}{_num(s.f1):>10}{s.support:>9}")
    print(
        f"macro F1 {_num(report.macro_f1)}  precision {_num(report.macro_precision)}  "
        f"recall {_num(report.macro_recall)}  coverage {report.coverage:.4f}"
    )
    print(f"rejection seen {_pct(report.rejection_seen)}  rejection novel {_pct(report.rejection_novel)}")
    return EXIT_OK


def _truth_from_table(table, archive) -> GroundTruthSet:
    known = set(archive.class_set)
    labels = []
    for sid, lab in zip(table.sample_ids, table.labels):
        if lab is None:
            raise AlignmentError(f"sample {sid!r} has no label; pass --truth")
        labels.append(lab if lab in known else NOVEL)
    return GroundTruthSet(list(table.sample_ids), labels)


def cmd_rc_curve(args, cfg: RunConfig) -> int:
    metrics = list(dict.fromkeys(args.metric or [cfg.inference.metric]))
    archive = load_archive(args.archive)
    table = load_feature_csv(args.test_csv)
    matrix = _test_matrix(archive, table)
    if args.truth:
        truth = load_truth_csv(args.truth)
        order = {sid: i for i, sid in enumerate(table.sample_ids)}
        missing = [sid for sid in truth.sample_ids if sid not in order]
        if missing:
            raise AlignmentError(f"truth names sample {missing[0]!r} absent from {args.test_csv}")
        if len(truth.sample_ids) != len(table):
            raise AlignmentError(f"truth covers {len(truth.sample_ids)} of {len(table)} samples")
        matrix = matrix[:, [order[sid] for sid in truth.sample_ids]]
    else:
        truth = _truth_from_table(table, archive)

    curves = {}
    rows = ["metric,threshold,coverage,risk"]
    for metric in metrics:
        labels, conf = predict_batch(archive, matrix, metric, cfg.inference.params(), max_workers=cfg.threads)
        curve = risk_coverage_curve(
            conf, labels, truth, n_points=cfg.evaluation.n_points, novel_mode=cfg.evaluation.novel_mode
        )
        curves[metric] = curve
        rows += [f"{metric},{p.threshold!r},{p.coverage!r},{p.risk!r}" for p in curve.points]
    _out(cfg, args.out_csv).write_text("\n".join(rows) + "\n", encoding="utf-8")
    _out(cfg, args.out_svg).write_text(render_rc_svg(curves), encoding="utf-8")
    for metric, curve in curves.items():
        print(f"AURC {metric} {curve.aurc:.6f}")
    return EXIT_OK


def _parse_families(text: str) -> list[FamilySpec]:
    out = []
    for item in text.split(","):
        parts = item.strip().split(":")
        if len(parts) != 3:
            raise ConfigError(f"family entry {item!r} must be LABEL:N_SIGNATURES:N_SAMPLES", field="families")
        try:
            out.append(FamilySpec(parts[0], int(parts[1]), int(parts[2])))
        except ValueError:
            raise ConfigError(f"family entry {item!r} has non-integer counts", field="families") from None
    return out


def cmd_synth(args, cfg: RunConfig) -> int:
    s = cfg.synth
    if args.n_features is not None:
        s = dataclasses.replace(s, n_features=args.n_features)
    if args.families:
        s = dataclasses.replace(s, families=_parse_families(args.families))
    if args.noise is not None:
        s = dataclasses.replace(s, noise=args.noise)
    if args.novel is not None:
        s = dataclasses.replace(s, novel=args.novel)
    try:
        syn = generate_synthetic(
            s.n_features,
            s.families,
            noise=s.noise,
            novel=s.novel,
            seed=cfg.seed,
            max_cosine=s.max_cosine,
            sparsity=s.sparsity,
            concentration=s.concentration,
            scale_range=s.scale_range,
            core_weight=s.core_weight,
            novel_overlap=s.novel_overlap,
        )
    except InvalidParameter as exc:
        raise ConfigError(str(exc), field="synth") from None
    out = _out(cfg, args.out_csv)
    save_feature_csv(syn.table, out)
    planted = _out(cfg, args.planted or _sidecar(args.out_csv, ".planted.json"))
    planted.write_text(json.dumps(syn.planted_truth(), sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {len(syn.table)} samples x {syn.table.n_features} features to {out}")
    return EXIT_OK


def cmd_split(args, cfg: RunConfig) -> int:
    if cfg.trial is None:
        raise ConfigError("split needs a 'trial' section in the config", field="trial")
    table = load_feature_csv(args.table_csv)
    split = sample_trial(table, cfg.trial, args.trial)
    out = _out(cfg, args.out_dir)
    write_trial(split, out)
    print(f"trial {args.trial}: {len(split.train)} train, {len(split.test)} test samples in {out}")
    return EXIT_OK


COMMANDS = {
    "build": cmd_build,
    "classify": cmd_classify,
    "evaluate": cmd_evaluate,
    "rc-curve": cmd_rc_curve,
    "synth": cmd_synth,
    "split": cmd_split,
}


def _error(kind: str, message) -> None:
    text = " ".join(str(message).split())
    print(f"error: {kind}: {text}", file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        _error("usage", exc)
        return EXIT_CONFIG
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = _load_run_config(args)
    except SigArchiveError as exc:
        _error(type(exc).__name__, exc)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        _error(type(exc).__name__, exc)
        return EXIT_CONFIG
    except SigArchiveError as exc:
        _error(type(exc).__name__, exc)
        return EXIT_RUNTIME
    except OSError as exc:
        _error("io", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
