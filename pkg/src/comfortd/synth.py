"""Reproducible synthetic IBI cohorts with per-subject idiosyncrasy.

Each subject's beats are drawn as a condition-dependent mean interval plus
three sinusoidal oscillations (very-low, low, and high frequency) and clipped
Gaussian jitter. Condition effects are shared by everyone (hotter means faster
heart rate and less beat-to-beat variability); the per-subject idiosyncrasy
vector shifts the generator constants so that absolute feature levels, and the
comfort ratings attached to them, differ from person to person.

Default generator constants live in this module and are part of the package
contract; the reference cohort used by the acceptance suite is
``make_reference_cohort()`` (12 subjects, seed 42).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .ingest import ComfortAnnotation, ConditionLabel, IBISeries

# Indices into SubjectProfile.idiosyncrasy_shift.
IDIO_FIELDS = (
    "mean_ibi_shift_ms",
    "sigma_scale_log",
    "vlf_amp_shift_ms",
    "lf_amp_shift_ms",
    "hf_amp_shift_ms",
    "lf_freq_shift_hz",
    "hf_freq_shift_hz",
    "cond_gap_scale_log",
    "comfort_gain_log",
    "surge_rate_scale_log",
    "surge_amp_scale_log",
)

# Shared condition response: hotter -> shorter intervals, less short-term
# variability, weaker very-low-frequency drift, lower comfort.
COND_IBI_DELTA_MS = {
    ConditionLabel.VERY_HOT_NO_COOLER: -60.0,
    ConditionLabel.VERY_HOT_COOLER: 0.0,
    ConditionLabel.HOT_NO_COOLER: 60.0,
}
COND_SIGMA_MS = {
    ConditionLabel.VERY_HOT_NO_COOLER: 19.0,
    ConditionLabel.VERY_HOT_COOLER: 22.0,
    ConditionLabel.HOT_NO_COOLER: 26.0,
}
COND_VLF_AMP_MS = {
    ConditionLabel.VERY_HOT_NO_COOLER: 8.0,
    ConditionLabel.VERY_HOT_COOLER: 14.0,
    ConditionLabel.HOT_NO_COOLER: 22.0,
}
COND_COMFORT = {
    ConditionLabel.VERY_HOT_NO_COOLER: 2.8,
    ConditionLabel.VERY_HOT_COOLER: 5.2,
    ConditionLabel.HOT_NO_COOLER: 7.4,
}
COND_SENSATION = {
    ConditionLabel.VERY_HOT_NO_COOLER: 8.6,
    ConditionLabel.VERY_HOT_COOLER: 6.6,
    ConditionLabel.HOT_NO_COOLER: 4.4,
}
COND_SWEAT = {
    ConditionLabel.VERY_HOT_NO_COOLER: 8.2,
    ConditionLabel.VERY_HOT_COOLER: 5.4,
    ConditionLabel.HOT_NO_COOLER: 3.2,
}

BASE_LF_AMP_MS = 20.0
BASE_HF_AMP_MS = 8.0
VLF_FREQ_HZ = 0.016
BASE_LF_FREQ_HZ = 0.08
BASE_HF_FREQ_HZ = 0.22
NOISE_CLIP_SIGMA = 1.28  # keeps artifacts out of the cleaner's jump window
IBI_FLOOR_MS = 320.0
IBI_CEIL_MS = 2800.0
ANNOTATION_PERIOD_S = 30.0
LABEL_NOISE = 0.35
NEUTRAL_COMFORT = 5.2  # pivot for per-subject comfort sensitivity

# Slow within-session wander (non-stationarity): real physiology never sits
# still, and without it every HRV feature becomes an implausibly crisp
# fingerprint of the person.
MEAN_DRIFT_MS = 30.0
SIGMA_DRIFT = 0.22
AMP_DRIFT = 0.3
DRIFT_FREQ_LO_HZ = 0.003
DRIFT_FREQ_HI_HZ = 0.01

# Transient vagal surges: a paired +E/-E interval excursion roughly every
# P-th beat (gaps and amplitude jittered). The pair's internal difference
# (>= 2*0.95*E = 57 ms) always counts toward pNN50, so the per-subject
# condition ordering of pNN50 is structural, not a tail event. Surges are
# most frequent in the coolest condition.
EXCURSION_MS = 30.0
EXCURSION_PERIOD = {
    ConditionLabel.VERY_HOT_NO_COOLER: 60,
    ConditionLabel.VERY_HOT_COOLER: 27,
    ConditionLabel.HOT_NO_COOLER: 12,
}
EXCURSION_GAP_JITTER = (0.7, 1.3)
EXCURSION_AMP_JITTER = (0.95, 1.25)

DEFAULT_SCHEDULE: tuple[tuple[ConditionLabel, float], ...] = (
    (ConditionLabel.VERY_HOT_COOLER, 540.0),
    (ConditionLabel.VERY_HOT_NO_COOLER, 540.0),
    (ConditionLabel.HOT_NO_COOLER, 540.0),
)


@dataclass
class SubjectProfile:
    """Generator parameters for one synthetic subject."""

    subject_id: str
    base_ibi_ms: float
    idiosyncrasy_shift: np.ndarray
    label_bias: float
    noise_scale: float
    rng_seed: int

    def __post_init__(self):
        self.idiosyncrasy_shift = np.asarray(self.idiosyncrasy_shift, dtype=np.float64)
        if self.idiosyncrasy_shift.shape != (len(IDIO_FIELDS),):
            raise ValueError(f"idiosyncrasy_shift must have {len(IDIO_FIELDS)} entries")
        if not 600.0 <= self.base_ibi_ms <= 1200.0:
            raise ValueError("base_ibi_ms must lie in [600, 1200]")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")

    def idio(self, name: str) -> float:
        return float(self.idiosyncrasy_shift[IDIO_FIELDS.index(name)])


def make_profiles(
    n_subjects: int,
    seed: int,
    idiosyncrasy: bool = True,
    noise_scale: float = 1.0,
) -> list[SubjectProfile]:
    """Draw a cohort of profiles. With ``idiosyncrasy=False`` every subject
    shares the same generator constants and a zero label bias (only the noise
    streams differ), which is the negative control for person effects."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
    profiles = []
    for i in range(n_subjects):
        sid = f"S{i:02d}"
        sub_seed = int(rng.integers(0, 2**31 - 1))
        if idiosyncrasy:
            base = float(rng.uniform(760.0, 980.0))
            shift = np.array(
                [
                    0.0,  # base draw already carries the mean shift
                    float(rng.uniform(math.log(0.65), math.log(1.5))),
                    float(rng.uniform(-8.0, 16.0)),
                    float(rng.uniform(-10.0, 12.0)),
                    float(rng.uniform(-4.0, 6.0)),
                    float(rng.uniform(-0.015, 0.02)),
                    float(rng.uniform(-0.03, 0.05)),
                    float(rng.uniform(math.log(0.8), math.log(1.3))),
                    float(rng.uniform(math.log(0.8), math.log(1.35))),
                    float(rng.uniform(math.log(0.6), math.log(1.65))),
                    float(rng.uniform(0.0, math.log(1.35))),
                ]
            )
            bias = float(np.clip(rng.normal(0.0, 2.6), -3.2, 3.2))
        else:
            base = 850.0
            shift = np.zeros(len(IDIO_FIELDS))
            bias = 0.0
        profiles.append(
            SubjectProfile(
                subject_id=sid,
                base_ibi_ms=base,
                idiosyncrasy_shift=shift,
                label_bias=bias,
                noise_scale=noise_scale,
                rng_seed=sub_seed,
            )
        )
    return profiles


def _series_params(profile: SubjectProfile, condition: ConditionLabel) -> dict:
    gap_scale = math.exp(profile.idio("cond_gap_scale_log"))
    sigma_scale = math.exp(profile.idio("sigma_scale_log"))
    return {
        "mean_ms": profile.base_ibi_ms
        + COND_IBI_DELTA_MS[condition] * gap_scale
        + profile.idio("mean_ibi_shift_ms"),
        "sigma_ms": COND_SIGMA_MS[condition] * sigma_scale,
        "vlf_amp": max(0.0, COND_VLF_AMP_MS[condition] + profile.idio("vlf_amp_shift_ms")),
        "lf_amp": max(0.0, BASE_LF_AMP_MS + profile.idio("lf_amp_shift_ms")),
        "hf_amp": max(0.0, BASE_HF_AMP_MS + profile.idio("hf_amp_shift_ms")),
        "lf_freq": BASE_LF_FREQ_HZ + profile.idio("lf_freq_shift_hz"),
        "hf_freq": BASE_HF_FREQ_HZ + profile.idio("hf_freq_shift_hz"),
    }


def _synthesize_series(
    profile: SubjectProfile,
    condition: ConditionLabel,
    duration_s: float,
    start_offset_ms: float,
) -> IBISeries:
    params = _series_params(profile, condition)
    rng = np.random.default_rng(
        np.random.SeedSequence([profile.rng_seed, int(condition)])
    )
    phases = rng.uniform(0.0, 2.0 * math.pi, size=3)
    # slow wander of the mean, the jitter scale, and the oscillation
    # amplitudes: each a two-tone unit signal, so sessions are non-stationary
    # but bounded and mean-reverting
    drift_f = rng.uniform(DRIFT_FREQ_LO_HZ, DRIFT_FREQ_HI_HZ, size=(3, 2))
    drift_ph = rng.uniform(0.0, 2.0 * math.pi, size=(3, 2))
    end_ms = start_offset_ms + duration_s * 1000.0

    def unit_wander(row: int, ts: float) -> float:
        return 0.6 * math.sin(2 * math.pi * drift_f[row, 0] * ts + drift_ph[row, 0]) + 0.4 * math.sin(
            2 * math.pi * drift_f[row, 1] * ts + drift_ph[row, 1]
        )

    t_list: list[float] = []
    ibi_list: list[float] = []
    t = start_offset_ms
    beat_index = 0
    period = EXCURSION_PERIOD[condition] * math.exp(profile.idio("surge_rate_scale_log"))
    next_surge = max(4, round(period * rng.uniform(*EXCURSION_GAP_JITTER)))
    surge_amp = 0.0
    while True:
        ts = (t - start_offset_ms) / 1000.0
        # the high-frequency tone stays steady: it carries the successive
        # -difference statistics whose condition ordering must not wobble
        amp_factor = 1.0 + AMP_DRIFT * unit_wander(2, ts)
        wander = amp_factor * (
            params["vlf_amp"] * math.sin(2 * math.pi * VLF_FREQ_HZ * ts + phases[0])
            + params["lf_amp"] * math.sin(2 * math.pi * params["lf_freq"] * ts + phases[1])
        ) + params["hf_amp"] * math.sin(2 * math.pi * params["hf_freq"] * ts + phases[2])
        mean_t = params["mean_ms"] + MEAN_DRIFT_MS * unit_wander(0, ts)
        if beat_index == next_surge:
            # surge onset: jitter is suppressed so the +E/-E step is exact
            surge_amp = (
                EXCURSION_MS
                * math.exp(profile.idio("surge_amp_scale_log"))
                * float(rng.uniform(*EXCURSION_AMP_JITTER))
            )
            ibi = float(np.clip(mean_t + wander + surge_amp, IBI_FLOOR_MS, IBI_CEIL_MS))
        elif beat_index == next_surge + 1:
            ibi = float(np.clip(mean_t + wander - surge_amp, IBI_FLOOR_MS, IBI_CEIL_MS))
            next_surge = beat_index + max(4, round(period * float(rng.uniform(*EXCURSION_GAP_JITTER))))
        else:
            sigma_t = params["sigma_ms"] * (1.0 + SIGMA_DRIFT * unit_wander(1, ts))
            jitter = profile.noise_scale * sigma_t * float(rng.standard_normal())
            clip = NOISE_CLIP_SIGMA * profile.noise_scale * sigma_t
            if clip > 0:
                jitter = float(np.clip(jitter, -clip, clip))
            ibi = float(np.clip(mean_t + wander + jitter, IBI_FLOOR_MS, IBI_CEIL_MS))
        if t + ibi > end_ms:
            break
        t += ibi
        t_list.append(t)
        ibi_list.append(ibi)
        beat_index += 1
    return IBISeries(
        subject_id=profile.subject_id,
        condition=condition,
        t_ms=np.array(t_list),
        ibi_ms=np.array(ibi_list),
    )


def _synthesize_annotations(
    profile: SubjectProfile,
    condition: ConditionLabel,
    duration_s: float,
    start_offset_ms: float,
) -> list[ComfortAnnotation]:
    rng = np.random.default_rng(
        np.random.SeedSequence([profile.rng_seed, int(condition), 0xA11])
    )
    out = []
    t = 0.0
    while t < duration_s:
        noise = profile.noise_scale * LABEL_NOISE
        gain = math.exp(profile.idio("comfort_gain_log"))
        comfort = (
            NEUTRAL_COMFORT
            + gain * (COND_COMFORT[condition] - NEUTRAL_COMFORT)
            + profile.label_bias
            + noise * float(rng.standard_normal())
        )
        sensation = (
            COND_SENSATION[condition] - 0.5 * profile.label_bias + noise * float(rng.standard_normal())
        )
        sweat = COND_SWEAT[condition] + 0.3 * profile.label_bias + noise * float(rng.standard_normal())
        out.append(
            ComfortAnnotation(
                subject_id=profile.subject_id,
                t_ms=start_offset_ms + t * 1000.0,
                comfort=float(np.clip(comfort, 1.0, 10.0)),
                sensation=float(np.clip(sensation, 1.0, 10.0)),
                sweat=float(np.clip(sweat, 1.0, 10.0)),
            )
        )
        t += ANNOTATION_PERIOD_S
    return out


def synthesize_cohort(
    n_subjects: int,
    profiles: Optional[Sequence[SubjectProfile]] = None,
    schedule: Sequence[tuple[ConditionLabel, float]] = DEFAULT_SCHEDULE,
    seed: int = 0,
) -> tuple[list[IBISeries], list[ComfortAnnotation]]:
    """Generate one IBI series per (subject, scheduled condition) plus the
    annotation tracks. Deterministic for a fixed seed and profile set."""
    if n_subjects < 2:
        raise ValueError("need at least 2 subjects")
    for cond, duration_s in schedule:
        if duration_s < 360.0:
            raise ValueError(
                f"duration {duration_s}s for condition {cond.name} is too short "
                "for one 5-minute window"
            )
    if profiles is None:
        profiles = make_profiles(n_subjects, seed)
    elif len(profiles) != n_subjects:
        raise ValueError("len(profiles) must equal n_subjects")

    series: list[IBISeries] = []
    annotations: list[ComfortAnnotation] = []
    for profile in profiles:
        # Sessions run back to back on one per-subject clock so that
        # annotations (which carry no condition) join unambiguously.
        offset_ms = 0.0
        for cond, duration_s in schedule:
            series.append(_synthesize_series(profile, cond, duration_s, offset_ms))
            annotations.extend(_synthesize_annotations(profile, cond, duration_s, offset_ms))
            offset_ms += duration_s * 1000.0
    return series, annotations


def make_reference_cohort(
    n_subjects: int = 12,
    seed: int = 42,
    idiosyncrasy: bool = True,
    schedule: Sequence[tuple[ConditionLabel, float]] = DEFAULT_SCHEDULE,
) -> tuple[list[IBISeries], list[ComfortAnnotation], list[SubjectProfile]]:
    """The cohort the evaluation studies and acceptance suite run on."""
    profiles = make_profiles(n_subjects, seed, idiosyncrasy=idiosyncrasy)
    series, annotations = synthesize_cohort(
        n_subjects, profiles=profiles, schedule=schedule, seed=seed
    )
    return series, annotations, profiles
