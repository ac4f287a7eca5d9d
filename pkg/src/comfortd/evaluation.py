"""Evaluation regimes: generic leave-one-subject-out, person-specific k-fold,
and hybrid calibration, plus class re-balancing and the subject-identity
importance control study.

Calibration follows the mix-and-shuffle recipe: a seeded shuffle of the
generic rows united with a few rows from otherwise unseen subjects, then an
ordinary ensemble fit. The sweep varies how many calibration rows each unseen
subject contributes and never tests on the contributed rows.
"""

from __future__ import annotations

import time
import warnings
import zlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .features import FeatureMatrix
from .trees import (
    EnsembleModel,
    EnsembleSpec,
    ImportanceReport,
    Task,
    feature_importance,
    fit_ensemble,
    predict,
    run_rfe,
)


@dataclass(frozen=True)
class Metrics:
    task: Task
    n: int
    accuracy: Optional[float] = None
    confusion: Optional[np.ndarray] = None
    rmse: Optional[float] = None
    r2: Optional[float] = None

    def as_dict(self) -> dict:
        out: dict = {"n": self.n}
        if self.task is Task.CLASSIFY:
            out["accuracy"] = self.accuracy
        else:
            out["rmse"] = self.rmse
            out["r2"] = self.r2
        return out


def compute_metrics(predictions: np.ndarray, truths: np.ndarray, task: Task) -> Metrics:
    predictions = np.asarray(predictions)
    truths = np.asarray(truths)
    if predictions.shape != truths.shape or predictions.size == 0:
        raise ValueError("predictions and truths must be equal-length and non-empty")
    if task is Task.CLASSIFY:
        codes = np.unique(np.concatenate([truths, predictions]))
        index = {c: i for i, c in enumerate(codes)}
        confusion = np.zeros((codes.size, codes.size), dtype=np.int64)
        for t, p in zip(truths, predictions):
            confusion[index[t], index[p]] += 1
        accuracy = float(np.trace(confusion)) / float(confusion.sum())
        return Metrics(task=task, n=truths.size, accuracy=accuracy, confusion=confusion)
    resid = predictions - truths
    rmse = float(np.sqrt(np.mean(resid**2)))
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((truths - truths.mean()) ** 2))
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res == 0.0 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return Metrics(task=task, n=truths.size, rmse=rmse, r2=r2)


@dataclass(frozen=True)
class EvaluationUnit:
    unit_id: str
    metrics: Metrics


@dataclass
class EvaluationReport:
    task: Task
    regime: str
    units: list[EvaluationUnit]
    seed: int
    wall_time_s: float
    spec: Optional[EnsembleSpec] = None
    flags: list[str] = field(default_factory=list)
    pooled: Optional[Metrics] = None  # out-of-fold predictions pooled, CV only

    def aggregate(self) -> dict[str, tuple[float, float]]:
        """Per-metric (mean, std) across units; recomputable from the units."""
        out: dict[str, tuple[float, float]] = {}
        keys = ("accuracy",) if self.task is Task.CLASSIFY else ("rmse", "r2")
        for key in keys:
            vals = np.array([getattr(u.metrics, key) for u in self.units], dtype=float)
            out[key] = (float(vals.mean()), float(vals.std()))
        return out

    def to_records(self) -> list[dict]:
        recs = []
        for u in self.units:
            recs.append({"unit": u.unit_id, "regime": self.regime, **u.metrics.as_dict()})
        return recs

    def to_text(self) -> str:
        lines = [f"{self.regime} report (seed={self.seed}, {self.wall_time_s:.1f}s)"]
        for u in self.units:
            fields = ", ".join(
                f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}"
                for k, v in u.metrics.as_dict().items()
            )
            lines.append(f"  {u.unit_id}: {fields}")
        for key, (mean, std) in self.aggregate().items():
            lines.append(f"  aggregate {key}: {mean:.4f} +/- {std:.4f}")
        for flag in self.flags:
            lines.append(f"  note: {flag}")
        return "\n".join(lines)


def _subject_seed(seed: int, subject: str) -> int:
    return int(np.random.SeedSequence([seed, zlib.crc32(subject.encode())]).generate_state(1)[0])


def _target(matrix: FeatureMatrix, task: Task) -> np.ndarray:
    return matrix.condition if task is Task.CLASSIFY else matrix.comfort


def _assert_disjoint(train: FeatureMatrix, test: FeatureMatrix) -> None:
    # row provenance guards against accidental test leakage
    if np.intersect1d(train.row_ids, test.row_ids).size:
        raise AssertionError("train/test rows overlap")


def rebalance_classes(matrix: FeatureMatrix, seed: int = 0) -> FeatureMatrix:
    """Seeded undersample of majority condition classes to the minority count."""
    classes, counts = np.unique(matrix.condition, return_counts=True)
    if classes.size < 2:
        warnings.warn("single-class matrix: re-balancing is a no-op")
        return matrix
    m = int(counts.min())
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBA1A]))
    keep: list[np.ndarray] = []
    for c in classes:
        idx = np.nonzero(matrix.condition == c)[0]
        if idx.size > m:
            idx = rng.choice(idx, size=m, replace=False)
        keep.append(idx)
    sel = np.sort(np.concatenate(keep))
    return matrix.select(sel)


def evaluate_generic_loso(
    matrix: FeatureMatrix,
    spec: EnsembleSpec,
    rebalance: bool = True,
) -> EvaluationReport:
    """Hold each subject out entirely; train on the rest, test on the holdout."""
    subjects = sorted(matrix.subjects())
    if len(subjects) < 2:
        raise ValueError("need at least 2 subjects for leave-one-subject-out")
    t0 = time.time()
    units: list[EvaluationUnit] = []
    flags: list[str] = []
    for subject in subjects:
        test_mask = matrix.subject_ids == subject
        test = matrix.select(test_mask)
        if len(test) == 0:
            flags.append(f"subject {subject} has no rows; skipped")
            continue
        train = matrix.select(~test_mask)
        if spec.task is Task.CLASSIFY and rebalance:
            train = rebalance_classes(train, seed=_subject_seed(spec.seed, subject))
        _assert_disjoint(train, test)
        model = fit_ensemble(train.X, _target(train, spec.task), spec, train.feature_names)
        units.append(
            EvaluationUnit(subject, _evaluate_on(model, test, spec.task))
        )
    return EvaluationReport(
        task=spec.task,
        regime="generic-loso",
        units=units,
        seed=spec.seed,
        wall_time_s=time.time() - t0,
        spec=spec,
        flags=flags,
    )


def _evaluate_on(model: EnsembleModel, test: FeatureMatrix, task: Task) -> Metrics:
    if task is Task.CLASSIFY:
        labels, _ = predict(model, test.X, test.feature_names)
        return compute_metrics(labels, test.condition, task)
    values = predict(model, test.X, test.feature_names)
    return compute_metrics(values, test.comfort, task)


def _stratified_folds(y: np.ndarray, folds: int, rng: np.random.Generator) -> np.ndarray:
    """Fold id per row; per-class shuffle then deal, so sizes differ by <= 1."""
    order: list[int] = []
    for c in np.unique(y):
        idx = np.nonzero(y == c)[0]
        order.extend(rng.permutation(idx).tolist())
    assignment = np.empty(len(y), dtype=np.int64)
    for pos, row in enumerate(order):
        assignment[row] = pos % folds
    return assignment


def _contiguous_folds(n: int, folds: int) -> np.ndarray:
    """Chronological blocks (regression CV), again with sizes within 1."""
    assignment = np.empty(n, dtype=np.int64)
    base, extra = divmod(n, folds)
    start = 0
    for f in range(folds):
        size = base + (1 if f < extra else 0)
        assignment[start : start + size] = f
        start += size
    return assignment


def evaluate_person_specific(
    matrix: FeatureMatrix,
    spec: EnsembleSpec,
    folds: int = 10,
) -> EvaluationReport:
    """K-fold cross-validation within a single subject's rows.

    Classification uses stratified shuffled folds (falling back, with a flag,
    to plain shuffled folds when a class has fewer members than folds);
    regression uses contiguous chronological blocks.
    """
    subjects = matrix.subjects()
    if len(subjects) != 1:
        raise ValueError("evaluate_person_specific expects rows of exactly one subject")
    subject = subjects[0]
    n = len(matrix)
    if n < folds:
        raise ValueError(f"need at least {folds} rows, have {n}")
    t0 = time.time()
    flags: list[str] = []
    rng = np.random.default_rng(
        np.random.SeedSequence([spec.seed, zlib.crc32(subject.encode()), 0xF01D])
    )
    if spec.task is Task.CLASSIFY:
        _, counts = np.unique(matrix.condition, return_counts=True)
        if counts.min() < folds:
            flags.append(
                f"class with {int(counts.min())} rows < {folds} folds; "
                "using unstratified shuffled folds"
            )
            assignment = rng.permutation(n) % folds
        else:
            assignment = _stratified_folds(matrix.condition, folds, rng)
    else:
        assignment = _contiguous_folds(n, folds)

    units = []
    oof = np.empty(n, dtype=np.float64)
    for f in range(folds):
        test = matrix.select(assignment == f)
        train = matrix.select(assignment != f)
        _assert_disjoint(train, test)
        model = fit_ensemble(train.X, _target(train, spec.task), spec, train.feature_names)
        units.append(EvaluationUnit(f"{subject}/fold{f}", _evaluate_on(model, test, spec.task)))
        if spec.task is Task.CLASSIFY:
            labels, _ = predict(model, test.X, test.feature_names)
            oof[assignment == f] = labels
        else:
            oof[assignment == f] = predict(model, test.X, test.feature_names)
    # out-of-fold predictions pooled over the whole subject: fold-level R2 is
    # not meaningful on near-constant contiguous blocks, the pooled one is
    pooled = compute_metrics(oof, _target(matrix, spec.task), spec.task)
    return EvaluationReport(
        task=spec.task,
        regime="person-specific-cv",
        units=units,
        seed=spec.seed,
        wall_time_s=time.time() - t0,
        spec=spec,
        flags=flags,
        pooled=pooled,
    )


def evaluate_person_specific_all(
    matrix: FeatureMatrix,
    spec: EnsembleSpec,
    folds: int = 10,
) -> EvaluationReport:
    """Run the person-specific CV for every subject; one unit per subject
    (that subject's mean over folds)."""
    t0 = time.time()
    units = []
    flags: list[str] = []
    for subject in sorted(matrix.subjects()):
        sub = matrix.select(matrix.subject_ids == subject)
        report = evaluate_person_specific(sub, spec, folds)
        flags.extend(report.flags)
        units.append(EvaluationUnit(subject, report.pooled))
    return EvaluationReport(
        task=spec.task,
        regime="person-specific-cv-all",
        units=units,
        seed=spec.seed,
        wall_time_s=time.time() - t0,
        spec=spec,
        flags=flags,
    )


def calibrate_model(
    generic: FeatureMatrix,
    calibration: Optional[FeatureMatrix],
    spec: EnsembleSpec,
    seed: int,
) -> EnsembleModel:
    """Mix calibration rows from unseen subjects into the generic pool,
    shuffle with the given seed, and fit."""
    if calibration is not None and len(calibration) > 0:
        overlap = set(generic.subjects()) & set(calibration.subjects())
        if overlap:
            raise ValueError(
                f"calibration subjects must be unseen; overlap: {sorted(overlap)}"
            )
        mixed = FeatureMatrix.concat([generic, calibration])
    else:
        mixed = generic
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD5]))
    order = rng.permutation(len(mixed))
    mixed = mixed.select(order)
    return fit_ensemble(mixed.X, _target(mixed, spec.task), spec, mixed.feature_names)


class CalibrationSelection(Enum):
    CHRONO_PREFIX = "chrono_prefix"
    RANDOM = "random"


@dataclass(frozen=True)
class CalibrationConfig:
    q: int = 3
    k_grid: tuple[int, ...] = (0, 100, 200, 300, 400)
    selection: CalibrationSelection = CalibrationSelection.CHRONO_PREFIX
    seed: int = 0
    repeats: int = 3
    per_subject_k: bool = True  # k per unseen subject; False pools k across them
    min_test_reserve: int = 100

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("q must be >= 1")
        if any(k < 0 for k in self.k_grid):
            raise ValueError("k values must be >= 0")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")


@dataclass(frozen=True)
class CalibrationCurve:
    metric: str
    points: list[tuple[int, float, float]]  # (k, mean, std)

    def ks(self) -> list[int]:
        return [k for k, _, _ in self.points]

    def mean(self, k: int) -> float:
        for kk, mean, _ in self.points:
            if kk == k:
                return mean
        raise KeyError(k)


def _calibration_rows(
    subject_matrix: FeatureMatrix,
    k: int,
    selection: CalibrationSelection,
    rng: np.random.Generator,
) -> np.ndarray:
    """Indices (into the subject's rows) used for calibration.

    Chronological-prefix selection spreads k across the subject's sessions in
    proportion to session length and takes each session's earliest windows,
    mirroring deployment where early feedback calibrates later predictions.
    """
    n = len(subject_matrix)
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    if k >= n:
        return np.arange(n, dtype=np.int64)
    if selection is CalibrationSelection.RANDOM:
        return np.sort(rng.choice(n, size=k, replace=False))
    conds = np.unique(subject_matrix.condition)
    groups = [np.nonzero(subject_matrix.condition == c)[0] for c in conds]
    sizes = np.array([g.size for g in groups], dtype=float)
    shares = np.floor(k * sizes / sizes.sum()).astype(int)
    # largest-remainder rounding, then cap at group size and spill leftovers
    remainder = k - int(shares.sum())
    frac = k * sizes / sizes.sum() - np.floor(k * sizes / sizes.sum())
    for i in np.argsort(-frac, kind="stable"):
        if remainder <= 0:
            break
        shares[i] += 1
        remainder -= 1
    shares = np.minimum(shares, sizes.astype(int))
    deficit = k - int(shares.sum())
    while deficit > 0:
        for i in np.argsort(-(sizes - shares), kind="stable"):
            if shares[i] < sizes[i]:
                shares[i] += 1
                deficit -= 1
                break
        else:
            break
    take = [g[:s] for g, s in zip(groups, shares)]
    return np.sort(np.concatenate(take)) if take else np.empty(0, dtype=np.int64)


def calibration_sweep(
    matrix: FeatureMatrix,
    cfg: CalibrationConfig,
    spec: EnsembleSpec,
) -> dict[str, CalibrationCurve]:
    """Sweep calibration sample counts; returns accuracy, rmse, and r2 curves.

    Each repeat holds out q subjects, trains one classifier and one regressor
    per k on (re-balanced generic rows + the holdouts' calibration rows), and
    evaluates on the holdouts' remaining rows only.
    """
    subjects = sorted(matrix.subjects())
    if len(subjects) <= cfg.q:
        raise ValueError("need more subjects than q")
    if cfg.q >= len(subjects) / 2:
        raise ValueError("q must be well below the cohort size (q < n/2)")

    spec_c = EnsembleSpec(spec.kind, Task.CLASSIFY, spec.n_estimators, spec.base, spec.seed)
    spec_r = EnsembleSpec(spec.kind, Task.REGRESS, spec.n_estimators, spec.base, spec.seed)

    samples: dict[str, dict[int, list[float]]] = {
        "accuracy": {k: [] for k in cfg.k_grid},
        "rmse": {k: [] for k in cfg.k_grid},
        "r2": {k: [] for k in cfg.k_grid},
    }
    skipped: set[int] = set()
    for rep in range(cfg.repeats):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, rep]))
        held = sorted(rng.choice(subjects, size=cfg.q, replace=False).tolist())
        held_mask = np.isin(matrix.subject_ids, held)
        generic = matrix.select(~held_mask)
        generic_rb = rebalance_classes(generic, seed=cfg.seed + rep)
        sub_matrices = {s: matrix.select(matrix.subject_ids == s) for s in held}

        for k in cfg.k_grid:
            per_subject = {}
            feasible = True
            for i, s in enumerate(held):
                k_s = k if cfg.per_subject_k else k // cfg.q + (1 if i < k % cfg.q else 0)
                srows = sub_matrices[s]
                if k_s > len(srows) - cfg.min_test_reserve:
                    warnings.warn(
                        f"k={k}: subject {s} has only {len(srows)} rows; skipping this k"
                    )
                    feasible = False
                    break
                sel_rng = np.random.default_rng(
                    np.random.SeedSequence([cfg.seed, rep, k, zlib.crc32(s.encode())])
                )
                per_subject[s] = _calibration_rows(srows, k_s, cfg.selection, sel_rng)
            if not feasible:
                skipped.add(k)
                continue

            calib_parts = [sub_matrices[s].select(per_subject[s]) for s in held]
            calib = (
                FeatureMatrix.concat([p for p in calib_parts if len(p)])
                if any(len(p) for p in calib_parts)
                else None
            )
            seed_fit = int(np.random.SeedSequence([cfg.seed, rep, k, 0xF17]).generate_state(1)[0])
            model_c = calibrate_model(generic_rb, calib, spec_c, seed_fit)
            model_r = calibrate_model(generic, calib, spec_r, seed_fit)

            for s in held:
                srows = sub_matrices[s]
                test_idx = np.setdiff1d(np.arange(len(srows)), per_subject[s])
                test = srows.select(test_idx)
                if calib is not None:
                    _assert_disjoint(calib, test)
                labels, _ = predict(model_c, test.X, test.feature_names)
                acc = compute_metrics(labels, test.condition, Task.CLASSIFY).accuracy
                values = predict(model_r, test.X, test.feature_names)
                reg = compute_metrics(values, test.comfort, Task.REGRESS)
                samples["accuracy"][k].append(acc)
                samples["rmse"][k].append(reg.rmse)
                samples["r2"][k].append(reg.r2)

    curves = {}
    for metric, per_k in samples.items():
        points = []
        for k in cfg.k_grid:
            if k in skipped or not per_k[k]:
                continue
            vals = np.array(per_k[k])
            points.append((k, float(vals.mean()), float(vals.std())))
        curves[metric] = CalibrationCurve(metric=metric, points=points)
    return curves


def importance_control_study(
    matrix: FeatureMatrix,
    spec: EnsembleSpec,
    drop_per_round: int = 1,
) -> tuple[ImportanceReport, list[tuple[str, int]]]:
    """Append an integer-coded subject identity feature, fit, and rank features
    both by impurity importance and by recursive elimination."""
    subjects = sorted(matrix.subjects())
    if len(subjects) < 2:
        raise ValueError("need at least 2 subjects")
    code = {s: i for i, s in enumerate(subjects)}
    subj_col = np.array([code[str(s)] for s in matrix.subject_ids], dtype=np.float64)
    X = np.hstack([matrix.X, subj_col[:, None]])
    names = list(matrix.feature_names) + ["subject_id"]
    y = _target(matrix, spec.task)
    model = fit_ensemble(X, y, spec, names)
    report = feature_importance(model)
    rfe_ranks = run_rfe(X, y, spec, names, drop_per_round=drop_per_round)
    return report, rfe_ranks


def export_curves(curves: dict[str, CalibrationCurve], path_prefix: str) -> list[str]:
    """Write one ``k,metric_mean,metric_std`` CSV per metric; returns paths."""
    written = []
    for metric, curve in curves.items():
        path = f"{path_prefix}_{metric}.csv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"k,{metric}_mean,{metric}_std\n")
            for k, mean, std in curve.points:
                fh.write(f"{k},{mean:.10g},{std:.10g}\n")
        written.append(path)
    return written
