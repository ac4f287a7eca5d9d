"""Sliding-window HRV features over interbeat-interval series.

The window seeds on the smallest beat prefix spanning five minutes, freezes
that beat count, and then slides one beat at a time. All features are computed
from the window's interval values alone, so a live stream and a batch pass over
the same beats produce bit-identical vectors.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.signal import welch

from .ingest import ConditionLabel, IBISeries

FEATURE_NAMES: tuple[str, ...] = (
    "MEAN_NN",
    "MEDIAN_NN",
    "SDNN",
    "RMSSD",
    "SDSD",
    "PNN50",
    "PNN20",
    "CVNN",
    "MEAN_HR",
    "MIN_HR",
    "MAX_HR",
    "STD_HR",
    "TRI_INDEX",
    "VLF_POWER",
    "LF_POWER",
    "HF_POWER",
    "TOTAL_POWER",
    "LF_HF",
    "LF_NU",
    "HF_NU",
    "VLF_REL",
    "LF_REL",
    "HF_REL",
    "SD1",
    "SD2",
    "SD1_SD2",
)

TRI_BIN_MS = 7.8125  # 1/128 s, the conventional histogram bin for NN intervals
RESAMPLE_HZ = 4.0
WELCH_SEGMENT_S = 256.0
VLF_BAND = (0.003, 0.04)
LF_BAND = (0.04, 0.15)
HF_BAND = (0.15, 0.4)
DEGENERATE_POWER_TOL = 1e-10


class WindowMode(Enum):
    FIXED_BEAT_COUNT = "fixed_beat_count"
    FIXED_DURATION = "fixed_duration"


@dataclass(frozen=True)
class WindowSpec:
    seed_duration_s: float = 300.0
    stride_beats: int = 1
    mode: WindowMode = WindowMode.FIXED_BEAT_COUNT

    def __post_init__(self):
        if self.seed_duration_s <= 0:
            raise ValueError("seed_duration_s must be positive")
        if self.stride_beats < 1:
            raise ValueError("stride_beats must be >= 1")


class InsufficientDataError(ValueError):
    """Series does not span one full seed window."""


@dataclass(frozen=True)
class HRVWindow:
    ibi_ms: np.ndarray
    window_index: int
    end_t_ms: float
    end_index: int  # index of the window's last beat within its series


def seed_beat_count(ibi_ms: np.ndarray, seed_duration_s: float = 300.0) -> int:
    """Smallest prefix length whose summed intervals reach the seed duration."""
    cum = np.cumsum(ibi_ms)
    target = seed_duration_s * 1000.0
    reach = np.nonzero(cum >= target)[0]
    if reach.size == 0:
        raise InsufficientDataError(
            f"insufficient data: {cum[-1] / 1000.0:.1f}s of beats, "
            f"need {seed_duration_s:.0f}s"
        )
    return int(reach[0]) + 1


def make_windows(series: IBISeries, spec: WindowSpec = WindowSpec()) -> list[HRVWindow]:
    """Slice a series into overlapping windows per the window spec."""
    n = len(series)
    k = seed_beat_count(series.ibi_ms, spec.seed_duration_s)
    windows: list[HRVWindow] = []
    if spec.mode is WindowMode.FIXED_BEAT_COUNT:
        for idx, start in enumerate(range(0, n - k + 1, spec.stride_beats)):
            stop = start + k
            windows.append(
                HRVWindow(
                    ibi_ms=series.ibi_ms[start:stop],
                    window_index=idx,
                    end_t_ms=float(series.t_ms[stop - 1]),
                    end_index=stop - 1,
                )
            )
    else:
        # variable beat count: each window is the shortest suffix ending at a
        # beat that spans the seed duration
        cum = np.concatenate([[0.0], np.cumsum(series.ibi_ms)])
        target = spec.seed_duration_s * 1000.0
        idx = 0
        for end in range(k - 1, n, spec.stride_beats):
            # smallest start with cum[end+1]-cum[start] >= target
            start = int(np.searchsorted(cum, cum[end + 1] - target, side="right")) - 1
            start = max(0, start)
            windows.append(
                HRVWindow(
                    ibi_ms=series.ibi_ms[start : end + 1],
                    window_index=idx,
                    end_t_ms=float(series.t_ms[end]),
                    end_index=end,
                )
            )
            idx += 1
    return windows


def time_domain(window: HRVWindow) -> dict[str, float]:
    ibi = window.ibi_ms
    k = ibi.size
    diff = np.diff(ibi)
    hr = 60000.0 / ibi
    sdnn = float(np.std(ibi))
    mean_nn = float(np.mean(ibi))
    out = {
        "MEAN_NN": mean_nn,
        "MEDIAN_NN": float(np.median(ibi)),
        "SDNN": sdnn,
        "RMSSD": float(np.sqrt(np.mean(diff**2))) if diff.size else 0.0,
        "SDSD": float(np.std(diff)) if diff.size else 0.0,
        "PNN50": 100.0 * float(np.count_nonzero(np.abs(diff) > 50.0)) / diff.size
        if diff.size
        else 0.0,
        "PNN20": 100.0 * float(np.count_nonzero(np.abs(diff) > 20.0)) / diff.size
        if diff.size
        else 0.0,
        "CVNN": sdnn / mean_nn,
        "MEAN_HR": float(np.mean(hr)),
        "MIN_HR": float(np.min(hr)),
        "MAX_HR": float(np.max(hr)),
        "STD_HR": float(np.std(hr)),
        "TRI_INDEX": _triangular_index(ibi),
    }
    return out


def _triangular_index(ibi: np.ndarray) -> float:
    lo = math.floor(float(np.min(ibi)) / TRI_BIN_MS) * TRI_BIN_MS
    n_bins = int(math.floor((float(np.max(ibi)) - lo) / TRI_BIN_MS)) + 1
    edges = lo + TRI_BIN_MS * np.arange(n_bins + 1)
    counts, _ = np.histogram(ibi, bins=edges)
    return float(ibi.size) / float(counts.max())


def resample_tachogram(ibi_ms: np.ndarray, fs: float = RESAMPLE_HZ) -> np.ndarray:
    """Cubic-spline resampling of the interval series onto a uniform grid.

    Beat i sits at the cumulative time of its interval; the grid starts at the
    first beat and steps 1/fs, never extrapolating past the last beat.
    """
    t = np.cumsum(ibi_ms) / 1000.0
    n_grid = int(math.floor((t[-1] - t[0]) * fs)) + 1
    grid = t[0] + np.arange(n_grid) / fs
    return CubicSpline(t, ibi_ms)(grid)


def freq_domain(window: HRVWindow) -> tuple[dict[str, float], bool]:
    """Welch band powers of the resampled tachogram. Returns (features, degenerate)."""
    x = resample_tachogram(window.ibi_ms)
    nperseg = min(int(WELCH_SEGMENT_S * RESAMPLE_HZ), x.size)
    f, psd = welch(
        x,
        fs=RESAMPLE_HZ,
        window="hann",
        nperseg=nperseg,
        noverlap=nperseg // 2,
        detrend="linear",
        scaling="density",
    )
    df = f[1] - f[0]
    vlf = float(np.sum(psd[(f >= VLF_BAND[0]) & (f < VLF_BAND[1])]) * df)
    lf = float(np.sum(psd[(f >= LF_BAND[0]) & (f < LF_BAND[1])]) * df)
    hf = float(np.sum(psd[(f >= HF_BAND[0]) & (f < HF_BAND[1])]) * df)
    total = vlf + lf + hf
    degenerate = total < DEGENERATE_POWER_TOL
    if degenerate:
        vlf = lf = hf = total = 0.0
    lf_plus_hf = lf + hf
    out = {
        "VLF_POWER": vlf,
        "LF_POWER": lf,
        "HF_POWER": hf,
        "TOTAL_POWER": total,
        "LF_HF": lf / hf if hf > 0 else 0.0,
        "LF_NU": 100.0 * lf / lf_plus_hf if lf_plus_hf > 0 else 0.0,
        "HF_NU": 100.0 * hf / lf_plus_hf if lf_plus_hf > 0 else 0.0,
        "VLF_REL": vlf / total if total > 0 else 0.0,
        "LF_REL": lf / total if total > 0 else 0.0,
        "HF_REL": hf / total if total > 0 else 0.0,
    }
    return out, degenerate


def nonlinear(window: HRVWindow) -> dict[str, float]:
    ibi = window.ibi_ms
    diff = np.diff(ibi)
    sdnn = float(np.std(ibi))
    sd1 = float(np.sqrt(np.var(diff) / 2.0)) if diff.size else 0.0
    sd2 = float(np.sqrt(max(0.0, 2.0 * sdnn**2 - sd1**2)))
    return {
        "SD1": sd1,
        "SD2": sd2,
        "SD1_SD2": sd1 / sd2 if sd2 > 0 else 0.0,
    }


def feature_vector(window: HRVWindow) -> tuple[np.ndarray, bool]:
    """The full 26-entry vector in registry order, plus the degenerate flag."""
    values = time_domain(window)
    freq, degenerate = freq_domain(window)
    values.update(freq)
    values.update(nonlinear(window))
    return np.array([values[name] for name in FEATURE_NAMES]), degenerate


@dataclass
class FeatureMatrix:
    """Rectangular table of per-window features with labels and provenance."""

    subject_ids: np.ndarray
    condition: np.ndarray
    comfort: np.ndarray
    window_index: np.ndarray
    X: np.ndarray
    feature_names: list[str] = field(default_factory=lambda: list(FEATURE_NAMES))
    row_ids: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        self.subject_ids = np.asarray(self.subject_ids, dtype=object)
        self.condition = np.asarray(self.condition, dtype=np.int64)
        self.comfort = np.asarray(self.comfort, dtype=np.float64)
        self.window_index = np.asarray(self.window_index, dtype=np.int64)
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape[1] != len(self.feature_names):
            raise ValueError("X must be (n_rows, n_features)")
        n = self.X.shape[0]
        for arr in (self.subject_ids, self.condition, self.comfort, self.window_index):
            if arr.shape != (n,):
                raise ValueError("column length mismatch")
        if self.row_ids is None:
            self.row_ids = np.arange(n, dtype=np.int64)
        else:
            self.row_ids = np.asarray(self.row_ids, dtype=np.int64)
        if not np.all(np.isfinite(self.X)):
            raise ValueError("feature matrix contains non-finite values")

    def __len__(self) -> int:
        return int(self.X.shape[0])

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def subjects(self) -> list[str]:
        seen: dict[str, None] = {}
        for s in self.subject_ids:
            seen.setdefault(str(s), None)
        return list(seen)

    def select(self, index: np.ndarray) -> "FeatureMatrix":
        """Row subset (boolean mask or integer index); provenance ids survive."""
        return FeatureMatrix(
            subject_ids=self.subject_ids[index],
            condition=self.condition[index],
            comfort=self.comfort[index],
            window_index=self.window_index[index],
            X=self.X[index],
            feature_names=list(self.feature_names),
            row_ids=self.row_ids[index],
        )

    @staticmethod
    def concat(parts: Sequence["FeatureMatrix"]) -> "FeatureMatrix":
        if not parts:
            raise ValueError("nothing to concatenate")
        names = parts[0].feature_names
        for p in parts:
            if p.feature_names != names:
                raise ValueError("feature name mismatch")
        return FeatureMatrix(
            subject_ids=np.concatenate([p.subject_ids for p in parts]),
            condition=np.concatenate([p.condition for p in parts]),
            comfort=np.concatenate([p.comfort for p in parts]),
            window_index=np.concatenate([p.window_index for p in parts]),
            X=np.vstack([p.X for p in parts]),
            feature_names=list(names),
            row_ids=np.concatenate([p.row_ids for p in parts]),
        )

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["subject_id", "condition", "comfort", "window_index", *self.feature_names])
            for i in range(len(self)):
                writer.writerow(
                    [
                        self.subject_ids[i],
                        int(self.condition[i]),
                        "%.17g" % self.comfort[i],
                        int(self.window_index[i]),
                    ]
                    + ["%.17g" % v for v in self.X[i]]
                )

    @staticmethod
    def from_csv(path: str | Path) -> "FeatureMatrix":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or header[:4] != ["subject_id", "condition", "comfort", "window_index"]:
                raise ValueError(f"{path}: not a feature matrix file")
            names = header[4:]
            subj, cond, comf, widx, rows = [], [], [], [], []
            for row in reader:
                if not row:
                    continue
                subj.append(row[0])
                cond.append(int(row[1]))
                comf.append(float(row[2]))
                widx.append(int(row[3]))
                rows.append([float(v) for v in row[4:]])
        return FeatureMatrix(
            subject_ids=np.array(subj, dtype=object),
            condition=np.array(cond, dtype=np.int64),
            comfort=np.array(comf, dtype=np.float64),
            window_index=np.array(widx, dtype=np.int64),
            X=np.array(rows, dtype=np.float64).reshape(len(rows), len(names)),
            feature_names=names,
        )


def extract_feature_matrix(
    series_list: Sequence[IBISeries], spec: WindowSpec = WindowSpec()
) -> FeatureMatrix:
    """Window every labeled series and stack the features into one matrix.

    Row order is (subject, condition, window index); each row's comfort label
    is the label of the window's final beat.
    """
    ordered = sorted(series_list, key=lambda s: (s.subject_id, int(s.condition)))
    subj, cond, comf, widx, rows = [], [], [], [], []
    for series in ordered:
        if series.comfort is None:
            raise ValueError(
                f"series {series.subject_id}/{series.condition.name} has no labels; "
                "run join_labels first"
            )
        try:
            windows = make_windows(series, spec)
        except ValueError as exc:
            raise type(exc)(
                f"{series.subject_id}/{series.condition.name}: {exc}"
            ) from None
        for w in windows:
            label = float(series.comfort[w.end_index])
            if math.isnan(label):
                raise ValueError(
                    f"{series.subject_id}/{series.condition.name}: window "
                    f"{w.window_index} has no comfort label"
                )
            vec, _ = feature_vector(w)
            subj.append(series.subject_id)
            cond.append(int(series.condition))
            comf.append(label)
            widx.append(w.window_index)
            rows.append(vec)
    n = len(rows)
    return FeatureMatrix(
        subject_ids=np.array(subj, dtype=object),
        condition=np.array(cond, dtype=np.int64),
        comfort=np.array(comf, dtype=np.float64),
        window_index=np.array(widx, dtype=np.int64),
        X=np.array(rows, dtype=np.float64).reshape(n, len(FEATURE_NAMES)),
    )
