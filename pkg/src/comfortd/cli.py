"""Command-line front end: batch experiments plus the service launcher.

Every run writes a ``manifest.json`` beside its outputs recording the command,
flags, package version, and input digests, so identical manifests imply
byte-identical results.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .evaluation import (
    CalibrationConfig,
    CalibrationSelection,
    calibration_sweep,
    evaluate_generic_loso,
    evaluate_person_specific,
    evaluate_person_specific_all,
    export_curves,
    importance_control_study,
)
from .features import FeatureMatrix, extract_feature_matrix
from .ingest import ConditionLabel, clean_ibi, join_labels, parse_ibi_dataset, write_ibi_dataset
from .model_io import save_model
from .synth import make_profiles, synthesize_cohort
from .trees import EnsembleKind, EnsembleSpec, Task, fit_ensemble

logger = logging.getLogger("comfortd")

MODEL_KINDS = {
    "bagging": EnsembleKind.BAGGING,
    "rf": EnsembleKind.RANDOM_FOREST,
    "extratrees": EnsembleKind.EXTRA_TREES,
    "adaboost": EnsembleKind.ADABOOST,
}
TASKS = {"classify": Task.CLASSIFY, "regress": Task.REGRESS}


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_dir: Path, command: str, args: dict, inputs: list[Path], outputs: list[str]) -> None:
    # paths are recorded as content digests, not locations, so two runs with
    # equal manifests are byte-reproducible wherever they land
    skip = {"func", "out", "inp", "config"}
    manifest = {
        "command": command,
        "args": {k: v for k, v in sorted(args.items()) if k not in skip},
        "package_version": __version__,
        "inputs": {Path(p).name: _sha256(p) for p in inputs if p is not None and Path(p).is_file()},
        "outputs": sorted(outputs),
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _load_matrix(path: str) -> FeatureMatrix:
    return FeatureMatrix.from_csv(path)


def _spec(args) -> EnsembleSpec:
    return EnsembleSpec(MODEL_KINDS[args.model], TASKS[args.task], seed=args.seed)


def _write_report(report, out_dir: Path) -> list[str]:
    (out_dir / "report.txt").write_text(report.to_text() + "\n", encoding="utf-8")
    with open(out_dir / "report_records.jsonl", "w", encoding="utf-8") as fh:
        for record in report.to_records():
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    return ["report.txt", "report_records.jsonl"]


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    schedule = tuple((c, float(args.duration)) for c in ConditionLabel)
    profiles = make_profiles(args.subjects, args.seed, idiosyncrasy=not args.no_idiosyncrasy)
    series, annotations = synthesize_cohort(
        args.subjects, profiles=profiles, schedule=schedule, seed=args.seed
    )
    write_ibi_dataset(series, out / "beats.csv", annotations, out / "annotations.csv")
    _write_manifest(out, "synth", vars(args) | {"func": None}, [], ["beats.csv", "annotations.csv"])
    logger.info("wrote %d series for %d subjects to %s", len(series), args.subjects, out)
    return 0


def cmd_extract(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    beats = Path(args.inp) / "beats.csv" if Path(args.inp).is_dir() else Path(args.inp)
    annotations = beats.parent / "annotations.csv"
    series, anns = parse_ibi_dataset(beats, annotations if annotations.exists() else None)
    labeled = [join_labels(clean_ibi(s), anns) for s in series]
    matrix = extract_feature_matrix(labeled)
    matrix.to_csv(out / "features.csv")
    _write_manifest(out, "extract", vars(args) | {"func": None}, [beats, annotations], ["features.csv"])
    logger.info("extracted %d rows", len(matrix))
    return 0


def cmd_train(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    matrix = _load_matrix(args.inp)
    spec = _spec(args)
    y = matrix.condition if spec.task is Task.CLASSIFY else matrix.comfort
    model = fit_ensemble(matrix.X, y, spec, matrix.feature_names)
    name = f"{args.model}_{args.task}.tcm"
    save_model(model, out / name)
    _write_manifest(out, "train", vars(args) | {"func": None}, [Path(args.inp)], [name])
    logger.info("trained %s (%d trees) -> %s", args.model, len(model.trees), out / name)
    return 0


def cmd_eval_loso(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    matrix = _load_matrix(args.inp)
    report = evaluate_generic_loso(matrix, _spec(args))
    outputs = _write_report(report, out)
    _write_manifest(out, "eval-loso", vars(args) | {"func": None}, [Path(args.inp)], outputs)
    print(report.to_text())
    return 0


def cmd_eval_person(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    matrix = _load_matrix(args.inp)
    spec = _spec(args)
    if args.subject is not None:
        sub = matrix.select(matrix.subject_ids == args.subject)
        if len(sub) == 0:
            raise ValueError(f"subject {args.subject} not in matrix")
        report = evaluate_person_specific(sub, spec, folds=args.folds)
    else:
        report = evaluate_person_specific_all(matrix, spec, folds=args.folds)
    outputs = _write_report(report, out)
    _write_manifest(out, "eval-person", vars(args) | {"func": None}, [Path(args.inp)], outputs)
    print(report.to_text())
    return 0


def cmd_calib_sweep(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    matrix = _load_matrix(args.inp)
    k_grid = tuple(int(v) for v in args.k.split(","))
    cfg = CalibrationConfig(
        q=args.q,
        k_grid=k_grid,
        selection=CalibrationSelection.RANDOM if args.random_selection else CalibrationSelection.CHRONO_PREFIX,
        seed=args.seed,
        repeats=args.repeats,
    )
    spec = EnsembleSpec(MODEL_KINDS[args.model], Task.CLASSIFY, seed=args.seed)
    curves = calibration_sweep(matrix, cfg, spec)
    written = export_curves(curves, str(out / "calibration"))
    _write_manifest(
        out, "calib-sweep", vars(args) | {"func": None}, [Path(args.inp)],
        [Path(p).name for p in written],
    )
    for metric, curve in curves.items():
        print(metric, " ".join(f"k={k}:{mean:.4f}" for k, mean, _ in curve.points))
    return 0


def cmd_importance(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    matrix = _load_matrix(args.inp)
    report, rfe_ranks = importance_control_study(matrix, _spec(args), drop_per_round=args.drop_per_round)
    with open(out / "importance.csv", "w", encoding="utf-8") as fh:
        fh.write("feature,importance,rank\n")
        for name, value, rank in report.entries:
            fh.write(f"{name},{value:.10g},{rank}\n")
    with open(out / "rfe.csv", "w", encoding="utf-8") as fh:
        fh.write("feature,rank\n")
        for name, rank in rfe_ranks:
            fh.write(f"{name},{rank}\n")
    _write_manifest(out, "importance", vars(args) | {"func": None}, [Path(args.inp)],
                    ["importance.csv", "rfe.csv"])
    top = report.entries[0]
    print(f"most important feature: {top[0]} ({top[1]:.4f})")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service.api import create_app_from_config

    app = create_app_from_config(args.config)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="comfortd",
        description="HRV-based personalized thermal comfort: data, models, evaluation, service",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--subjects", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=540.0, help="seconds per condition session")
    p.add_argument("--no-idiosyncrasy", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="HRV feature matrix from an IBI dataset")
    p.add_argument("--in", dest="inp", required=True, help="dataset directory or beats csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="fit one ensemble on a feature matrix")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--model", choices=MODEL_KINDS, default="extratrees")
    p.add_argument("--task", choices=TASKS, default="classify")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-loso", help="generic model, leave-one-subject-out")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--model", choices=MODEL_KINDS, default="extratrees")
    p.add_argument("--task", choices=TASKS, default="classify")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval_loso)

    p = sub.add_parser("eval-person", help="person-specific cross-validation")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--model", choices=MODEL_KINDS, default="extratrees")
    p.add_argument("--task", choices=TASKS, default="classify")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--subject", default=None, help="evaluate one subject only")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval_person)

    p = sub.add_parser("calib-sweep", help="hybrid-model calibration sweep")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--model", choices=MODEL_KINDS, default="extratrees")
    p.add_argument("--q", type=int, default=3)
    p.add_argument("--k", default="0,100,200,300,400", help="comma-separated sample counts")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--random-selection", action="store_true",
                   help="sample calibration rows at random instead of the chronological prefix")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calib_sweep)

    p = sub.add_parser("importance", help="feature ranking with the subject-identity control")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--model", choices=MODEL_KINDS, default="extratrees")
    p.add_argument("--task", choices=TASKS, default="regress")
    p.add_argument("--drop-per-round", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("serve", help="run the comfort provision HTTP service")
    p.add_argument("--config", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8764)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("COMFORTD_LOG", "INFO").upper(),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
