"""Personalized thermal-comfort prediction from heart rate variability."""

__version__ = "0.1.0"

from .ingest import (
    ComfortAnnotation,
    ConditionLabel,
    FilterPolicy,
    IBISample,
    IBISeries,
    clean_ibi,
    join_labels,
    parse_ibi_dataset,
    write_ibi_dataset,
)
from .features import (
    FEATURE_NAMES,
    FeatureMatrix,
    WindowSpec,
    extract_feature_matrix,
    make_windows,
)
from .synth import SubjectProfile, make_profiles, make_reference_cohort, synthesize_cohort
from .trees import (
    EnsembleKind,
    EnsembleModel,
    EnsembleSpec,
    Task,
    TreeParams,
    feature_importance,
    fit_cart,
    fit_ensemble,
    predict,
    run_rfe,
)
from .model_io import deserialize_model, load_model, save_model, serialize_model

__all__ = [
    "ComfortAnnotation",
    "ConditionLabel",
    "FilterPolicy",
    "IBISample",
    "IBISeries",
    "clean_ibi",
    "join_labels",
    "parse_ibi_dataset",
    "write_ibi_dataset",
    "FEATURE_NAMES",
    "FeatureMatrix",
    "WindowSpec",
    "extract_feature_matrix",
    "make_windows",
    "SubjectProfile",
    "make_profiles",
    "make_reference_cohort",
    "synthesize_cohort",
    "EnsembleKind",
    "EnsembleModel",
    "EnsembleSpec",
    "Task",
    "TreeParams",
    "feature_importance",
    "fit_cart",
    "fit_ensemble",
    "predict",
    "run_rfe",
    "deserialize_model",
    "load_model",
    "save_model",
    "serialize_model",
    "__version__",
]
