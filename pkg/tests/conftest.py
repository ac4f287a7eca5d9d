import numpy as np
import pytest

from comfortd.features import extract_feature_matrix
from comfortd.ingest import ConditionLabel, clean_ibi, join_labels
from comfortd.synth import make_profiles, make_reference_cohort, synthesize_cohort


def build_matrix(series, annotations):
    labeled = [join_labels(clean_ibi(s), annotations) for s in series]
    return extract_feature_matrix(labeled)


@pytest.fixture(scope="session")
def ref_cohort():
    """The acceptance cohort: 12 subjects, seed 42, idiosyncrasy on."""
    series, annotations, profiles = make_reference_cohort(n_subjects=12, seed=42)
    return series, annotations, profiles


@pytest.fixture(scope="session")
def ref_matrix(ref_cohort):
    series, annotations, _ = ref_cohort
    return build_matrix(series, annotations)


@pytest.fixture(scope="session")
def small_cohort():
    """Six idiosyncratic subjects on a short schedule, for unit tests."""
    schedule = tuple((c, 400.0) for c in ConditionLabel)
    profiles = make_profiles(6, seed=7)
    series, annotations = synthesize_cohort(6, profiles=profiles, schedule=schedule, seed=7)
    return series, annotations, profiles


@pytest.fixture(scope="session")
def small_matrix(small_cohort):
    series, annotations, _ = small_cohort
    return build_matrix(series, annotations)


@pytest.fixture(scope="session")
def flat_cohort():
    """Negative control: no idiosyncrasy, shared generator constants."""
    schedule = tuple((c, 400.0) for c in ConditionLabel)
    profiles = make_profiles(6, seed=11, idiosyncrasy=False)
    series, annotations = synthesize_cohort(6, profiles=profiles, schedule=schedule, seed=11)
    return series, annotations, profiles


@pytest.fixture(scope="session")
def flat_matrix(flat_cohort):
    series, annotations, _ = flat_cohort
    return build_matrix(series, annotations)
