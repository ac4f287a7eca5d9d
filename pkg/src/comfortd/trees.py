"""CART trees and the four ensemble families built on them.

Bagging and random forests bootstrap rows; extremely randomized trees use the
full sample with uniform-random thresholds; adaptive boosting reweights rows
sequentially (multiclass exponential scheme for classification, the linear-loss
variant for regression). Every tree's randomness is seeded from the ensemble
seed via :func:`comfortd._tree_builder.derive_seed`, so a fitted model is a
pure function of (data, spec).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np

from ._tree_builder import apply_tree, build_tree, derive_seed


class SplitStrategy(Enum):
    BEST = "best"
    RANDOM = "random"


class Criterion(Enum):
    GINI = "gini"
    VARIANCE = "variance"


class EnsembleKind(Enum):
    BAGGING = "bagging"
    RANDOM_FOREST = "random_forest"
    EXTRA_TREES = "extra_trees"
    ADABOOST = "adaboost"


class Task(Enum):
    CLASSIFY = "classify"
    REGRESS = "regress"


MaxFeatures = Union[str, int]  # "all", "sqrt", or an explicit count


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 64
    min_samples_leaf: int = 1
    min_samples_split: int = 2
    split_strategy: SplitStrategy = SplitStrategy.BEST
    max_features: MaxFeatures = "all"
    criterion: Criterion = Criterion.GINI

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if isinstance(self.max_features, str) and self.max_features not in ("all", "sqrt"):
            raise ValueError("max_features must be 'all', 'sqrt', or an int")
        if isinstance(self.max_features, int) and self.max_features < 1:
            raise ValueError("max_features count must be >= 1")


# Table-style defaults per family: estimator counts and split behaviour.
_KIND_DEFAULTS = {
    EnsembleKind.BAGGING: dict(n_estimators=50, strategy=SplitStrategy.BEST, max_features="all", bootstrap=True),
    EnsembleKind.RANDOM_FOREST: dict(n_estimators=100, strategy=SplitStrategy.BEST, max_features="sqrt", bootstrap=True),
    EnsembleKind.EXTRA_TREES: dict(n_estimators=100, strategy=SplitStrategy.RANDOM, max_features="sqrt", bootstrap=False),
    EnsembleKind.ADABOOST: dict(n_estimators=50, strategy=SplitStrategy.BEST, max_features="all", bootstrap=False),
}


@dataclass(frozen=True)
class EnsembleSpec:
    kind: EnsembleKind
    task: Task
    n_estimators: Optional[int] = None
    base: Optional[TreeParams] = None
    seed: int = 0

    def __post_init__(self):
        defaults = _KIND_DEFAULTS[self.kind]
        if self.n_estimators is None:
            object.__setattr__(self, "n_estimators", defaults["n_estimators"])
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if self.base is None:
            object.__setattr__(
                self,
                "base",
                TreeParams(
                    split_strategy=defaults["strategy"],
                    max_features=defaults["max_features"],
                    criterion=Criterion.GINI if self.task is Task.CLASSIFY else Criterion.VARIANCE,
                ),
            )

    @property
    def bootstrap(self) -> bool:
        return _KIND_DEFAULTS[self.kind]["bootstrap"]


@dataclass
class Tree:
    """One fitted tree as flat node arrays (the serialization layout)."""

    task: Task
    feature: np.ndarray  # int32, -1 at leaves
    threshold: np.ndarray  # float64
    left: np.ndarray  # int32
    right: np.ndarray  # int32
    leaf_value: np.ndarray  # (n_nodes, n_classes) frequencies, or (n_nodes, 1) means
    importances: np.ndarray  # raw impurity decrease per feature

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    @property
    def n_splits(self) -> int:
        return int(np.count_nonzero(self.feature >= 0))

    def apply(self, X: np.ndarray) -> np.ndarray:
        return apply_tree(np.ascontiguousarray(X, dtype=np.float64), self.feature, self.threshold, self.left, self.right)

    def predict_value(self, X: np.ndarray) -> np.ndarray:
        """Leaf payload per row: class frequencies or the leaf mean."""
        return self.leaf_value[self.apply(X)]


def _resolve_max_features(max_features: MaxFeatures, n_features: int) -> int:
    if max_features == "all":
        return n_features
    if max_features == "sqrt":
        return max(1, int(math.sqrt(n_features)))
    return min(int(max_features), n_features)


def _grow(
    X: np.ndarray,
    y_enc: np.ndarray,
    weights: np.ndarray,
    params: TreeParams,
    n_classes: int,
    seed: int,
) -> Tree:
    n, n_feat = X.shape
    if n == 0:
        raise ValueError("cannot fit a tree on zero rows")
    is_classif = params.criterion is Criterion.GINI
    width = n_classes if is_classif else 1
    cap = max(1, 2 * n + 1)
    feature = np.empty(cap, np.int32)
    threshold = np.empty(cap, np.float64)
    left = np.empty(cap, np.int32)
    right = np.empty(cap, np.int32)
    leaf_value = np.zeros((cap, width), np.float64)
    importances = np.zeros(n_feat, np.float64)
    n_nodes = build_tree(
        X,
        y_enc,
        weights,
        1 if is_classif else 0,
        n_classes if is_classif else 1,
        params.max_depth,
        params.min_samples_leaf,
        params.min_samples_split,
        1 if params.split_strategy is SplitStrategy.RANDOM else 0,
        _resolve_max_features(params.max_features, n_feat),
        np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
        feature,
        threshold,
        left,
        right,
        leaf_value,
        importances,
    )
    return Tree(
        task=Task.CLASSIFY if is_classif else Task.REGRESS,
        feature=feature[:n_nodes].copy(),
        threshold=threshold[:n_nodes].copy(),
        left=left[:n_nodes].copy(),
        right=right[:n_nodes].copy(),
        leaf_value=leaf_value[:n_nodes].copy(),
        importances=importances,
    )


def fit_cart(
    X: np.ndarray,
    y: np.ndarray,
    params: TreeParams = TreeParams(),
    rng_seed: int = 0,
) -> tuple[Tree, np.ndarray]:
    """Fit one tree. For gini trees returns (tree, class_codes); class codes are
    the sorted distinct labels and leaf frequencies follow that order. For
    variance trees the second element is an empty array."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ValueError("X must be 2-D with at least one feature")
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y length mismatch")
    if params.criterion is Criterion.GINI:
        codes, y_enc = np.unique(y, return_inverse=True)
        tree = _grow(X, y_enc.astype(np.float64), np.ones(len(y)), params, len(codes), rng_seed)
        return tree, codes
    tree = _grow(X, y.astype(np.float64), np.ones(len(y)), params, 1, rng_seed)
    return tree, np.array([])


@dataclass
class EnsembleModel:
    spec: EnsembleSpec
    trees: list[Tree]
    tree_weights: np.ndarray
    feature_names: list[str]
    class_codes: Optional[np.ndarray]  # sorted label values, classification only
    training_meta: dict

    @property
    def n_classes(self) -> int:
        return 0 if self.class_codes is None else int(self.class_codes.size)


def fit_ensemble(
    X: np.ndarray,
    y: np.ndarray,
    spec: EnsembleSpec,
    feature_names: Optional[Sequence[str]] = None,
) -> EnsembleModel:
    """Train an ensemble per its spec; deterministic for a fixed spec.seed."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y)
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least 2 training rows")
    if feature_names is None:
        feature_names = [f"f{i}" for i in range(X.shape[1])]
    elif len(feature_names) != X.shape[1]:
        raise ValueError("feature_names length does not match X")

    if spec.task is Task.CLASSIFY:
        codes, y_enc = np.unique(y, return_inverse=True)
        y_enc = y_enc.astype(np.float64)
        n_classes = len(codes)
        params = spec.base
        if params.criterion is not Criterion.GINI:
            params = TreeParams(
                params.max_depth,
                params.min_samples_leaf,
                params.min_samples_split,
                params.split_strategy,
                params.max_features,
                Criterion.GINI,
            )
    else:
        codes = None
        y_enc = y.astype(np.float64)
        n_classes = 1
        params = spec.base
        if params.criterion is not Criterion.VARIANCE:
            params = TreeParams(
                params.max_depth,
                params.min_samples_leaf,
                params.min_samples_split,
                params.split_strategy,
                params.max_features,
                Criterion.VARIANCE,
            )

    if spec.kind is EnsembleKind.ADABOOST:
        trees, weights = _fit_adaboost(X, y_enc, params, spec, n_classes)
    else:
        trees = []
        for m in range(spec.n_estimators):
            tree_seed = derive_seed(spec.seed, m)
            if spec.bootstrap:
                boot_rng = np.random.default_rng(derive_seed(tree_seed, 0))
                idx = boot_rng.integers(0, n, size=n)
                Xb = np.ascontiguousarray(X[idx])
                yb = y_enc[idx]
            else:
                Xb, yb = X, y_enc
            trees.append(_grow(Xb, yb, np.ones(len(yb)), params, n_classes, derive_seed(tree_seed, 1)))
        weights = np.ones(len(trees))

    return EnsembleModel(
        spec=spec,
        trees=trees,
        tree_weights=weights,
        feature_names=list(feature_names),
        class_codes=codes.astype(np.int64) if codes is not None else None,
        training_meta={
            "n_samples": int(n),
            "seed": int(spec.seed),
            "model_version": 0,
            "trained_at": time.time(),
        },
    )


def _fit_adaboost(X, y_enc, params, spec, n_classes):
    n = X.shape[0]
    w = np.full(n, 1.0 / n)
    trees: list[Tree] = []
    alphas: list[float] = []
    for m in range(spec.n_estimators):
        seed = derive_seed(spec.seed, m)
        tree = _grow(X, y_enc, w, params, n_classes, derive_seed(seed, 1))
        if spec.task is Task.CLASSIFY:
            pred = np.argmax(tree.predict_value(X), axis=1).astype(np.float64)
            wrong = pred != y_enc
            err = float(np.sum(w[wrong]))
            if err <= 0.0:
                trees.append(tree)
                alphas.append(1.0)
                break
            if err >= 1.0 - 1.0 / n_classes:
                # a base learner no better than chance: stop boosting here,
                # keeping the first round so the model is never empty
                if m == 0:
                    trees.append(tree)
                    alphas.append(1.0)
                break
            alpha = math.log((1.0 - err) / err) + math.log(n_classes - 1.0) if n_classes > 1 else 1.0
            trees.append(tree)
            alphas.append(alpha)
            w = w * np.exp(alpha * wrong)
            w /= w.sum()
        else:
            pred = tree.predict_value(X)[:, 0]
            abs_err = np.abs(pred - y_enc)
            err_max = float(abs_err.max())
            if err_max <= 0.0:
                trees.append(tree)
                alphas.append(1.0)
                break
            loss = abs_err / err_max  # linear loss
            lbar = float(np.sum(w * loss))
            if lbar >= 0.5:
                if m == 0:
                    trees.append(tree)
                    alphas.append(1.0)
                break
            beta = lbar / (1.0 - lbar)
            alpha = math.log(1.0 / beta)
            trees.append(tree)
            alphas.append(alpha)
            w = w * np.power(beta, 1.0 - loss)
            w /= w.sum()
    return trees, np.array(alphas)


class FeatureMismatchError(ValueError):
    pass


def _check_features(model: EnsembleModel, feature_names: Optional[Sequence[str]]) -> None:
    if feature_names is None:
        return
    if list(feature_names) == model.feature_names:
        return
    missing = [f for f in model.feature_names if f not in feature_names]
    extra = [f for f in feature_names if f not in model.feature_names]
    parts = []
    if missing:
        parts.append(f"missing features: {missing}")
    if extra:
        parts.append(f"unexpected features: {extra}")
    if not parts:
        parts.append("feature order differs from the model's")
    raise FeatureMismatchError("; ".join(parts))


def predict(
    model: EnsembleModel,
    X: np.ndarray,
    feature_names: Optional[Sequence[str]] = None,
) -> Union[tuple[np.ndarray, np.ndarray], np.ndarray]:
    """Ensemble prediction.

    Classification returns (labels, probabilities); probabilities are the
    tree-weight-weighted mean of leaf class frequencies and ties go to the
    lowest class code. Regression returns the weighted mean of tree outputs.
    """
    _check_features(model, feature_names)
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(model.feature_names):
        raise FeatureMismatchError(
            f"expected {len(model.feature_names)} features, got {X.shape[1] if X.ndim == 2 else 'non-2D'}"
        )
    w_total = float(model.tree_weights.sum())
    if model.spec.task is Task.CLASSIFY:
        probs = np.zeros((X.shape[0], model.n_classes))
        for tree, tw in zip(model.trees, model.tree_weights):
            probs += tw * tree.predict_value(X)
        probs /= w_total
        probs /= probs.sum(axis=1, keepdims=True)
        labels = model.class_codes[np.argmax(probs, axis=1)]
        return labels, probs
    values = np.zeros(X.shape[0])
    for tree, tw in zip(model.trees, model.tree_weights):
        values += tw * tree.predict_value(X)[:, 0]
    return values / w_total


@dataclass(frozen=True)
class ImportanceReport:
    """Features ordered most-important-first; importances sum to one."""

    entries: list[tuple[str, float, int]]  # (feature_name, importance, rank)

    def rank_of(self, name: str) -> Optional[int]:
        for feat, _, rank in self.entries:
            if feat == name:
                return rank
        return None

    def __len__(self) -> int:
        return len(self.entries)


def feature_importance(model: EnsembleModel) -> ImportanceReport:
    """Mean decrease in impurity, tree-normalized, averaged, re-normalized."""
    total = np.zeros(len(model.feature_names))
    n_contributing = 0
    for tree in model.trees:
        s = tree.importances.sum()
        if s > 0:
            total += tree.importances / s
            n_contributing += 1
    if n_contributing == 0:
        return ImportanceReport(entries=[])
    mean_imp = total / len(model.trees)
    mean_imp = mean_imp / mean_imp.sum()
    order = np.argsort(-mean_imp, kind="stable")
    entries = [
        (model.feature_names[i], float(mean_imp[i]), rank + 1)
        for rank, i in enumerate(order)
    ]
    return ImportanceReport(entries=entries)


def run_rfe(
    X: np.ndarray,
    y: np.ndarray,
    spec: EnsembleSpec,
    feature_names: Sequence[str],
    drop_per_round: int = 1,
) -> list[tuple[str, int]]:
    """Recursive feature elimination; rank 1 is the last surviving feature.

    Refits the ensemble after each drop, removing the ``drop_per_round`` least
    important features per round.
    """
    n_feat = X.shape[1]
    if n_feat < 2:
        raise ValueError("RFE needs at least 2 features")
    if drop_per_round >= n_feat:
        raise ValueError("drop_per_round must be below the feature count")
    if len(feature_names) != n_feat:
        raise ValueError("feature_names length does not match X")

    active = list(range(n_feat))
    ranks: dict[int, int] = {}
    next_rank = n_feat
    while len(active) > 1:
        model = fit_ensemble(X[:, active], y, spec, [feature_names[i] for i in active])
        imp = np.zeros(len(active))
        for tree in model.trees:
            s = tree.importances.sum()
            if s > 0:
                imp += tree.importances / s
        d = min(drop_per_round, len(active) - 1)
        # least important first; ties go to the higher original index
        order = sorted(range(len(active)), key=lambda j: (imp[j], -active[j]))
        doomed = order[:d]
        for j in sorted(doomed, key=lambda j: imp[j]):
            ranks[active[j]] = next_rank
            next_rank -= 1
        active = [active[j] for j in range(len(active)) if j not in set(doomed)]
    ranks[active[0]] = 1
    return sorted(
        ((feature_names[i], rank) for i, rank in ranks.items()), key=lambda kv: kv[1]
    )
