"""IBI dataset loading, validation, artifact cleaning, and label joining.

The on-disk format is plain CSV (UTF-8, header row):

* beat file:        ``subject_id,condition,t_ms,ibi_ms``
* annotation file:  ``subject_id,t_ms,comfort,sensation,sweat``

Condition codes are the integer values of :class:`ConditionLabel`.
"""

from __future__ import annotations

import csv
import json
import statistics
from collections import deque
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np


class ConditionLabel(IntEnum):
    """Thermal environment of a recording session (the classification target)."""

    VERY_HOT_COOLER = 0
    VERY_HOT_NO_COOLER = 1
    HOT_NO_COOLER = 2


class DatasetError(ValueError):
    """Malformed dataset file; message carries the offending row number."""


class SignalQualityError(ValueError):
    """Raised when a series loses more than half of its beats to cleaning."""


@dataclass(frozen=True)
class IBISample:
    """One heartbeat: time of the beat and the interval since the previous one."""

    t_ms: float
    ibi_ms: float


@dataclass(frozen=True)
class ComfortAnnotation:
    """A periodic self-report on the 1..10 visual analog scale."""

    subject_id: str
    t_ms: float
    comfort: float
    sensation: float
    sweat: float

    def __post_init__(self):
        for name in ("comfort", "sensation", "sweat"):
            v = float(np.clip(getattr(self, name), 1.0, 10.0))
            object.__setattr__(self, name, v)


@dataclass
class IBISeries:
    """Interbeat intervals for one subject under one condition.

    ``comfort`` is filled by :func:`join_labels` (one value per beat,
    last-observation-carried-forward from the annotation track).
    """

    subject_id: str
    condition: ConditionLabel
    t_ms: np.ndarray
    ibi_ms: np.ndarray
    comfort: Optional[np.ndarray] = None

    def __post_init__(self):
        self.t_ms = np.asarray(self.t_ms, dtype=np.float64)
        self.ibi_ms = np.asarray(self.ibi_ms, dtype=np.float64)
        if self.t_ms.size == 0:
            raise ValueError("IBISeries requires at least one sample")
        if self.t_ms.shape != self.ibi_ms.shape:
            raise ValueError("t_ms and ibi_ms must have equal length")
        if np.any(np.diff(self.t_ms) <= 0):
            bad = int(np.argmax(np.diff(self.t_ms) <= 0)) + 1
            raise ValueError(f"timestamps not strictly increasing at sample {bad}")

    def __len__(self) -> int:
        return int(self.t_ms.size)

    @property
    def duration_ms(self) -> float:
        return float(self.t_ms[-1])

    @property
    def is_labeled(self) -> bool:
        return self.comfort is not None


@dataclass(frozen=True)
class FilterPolicy:
    """Artifact filter: physiologic range gate plus running-median jump test."""

    min_ibi_ms: float = 250.0
    max_ibi_ms: float = 3000.0
    max_rel_jump: float = 0.2
    median_window: int = 11

    def __post_init__(self):
        if not self.min_ibi_ms < self.max_ibi_ms:
            raise ValueError("min_ibi_ms must be below max_ibi_ms")
        if not 0.0 < self.max_rel_jump < 1.0:
            raise ValueError("max_rel_jump must lie in (0, 1)")


class OnlineCleaner:
    """Causal beat filter shared by the batch cleaner and the live service.

    A beat is accepted when it lies strictly inside the physiologic range and
    differs from the running median of the last ``median_window`` accepted
    beats by at most ``max_rel_jump`` (relative). State is the accepted-beat
    history only, so replaying an already-cleaned series accepts every beat.
    """

    def __init__(self, policy: FilterPolicy = FilterPolicy()):
        self.policy = policy
        self._recent: deque = deque(maxlen=policy.median_window)

    def accept(self, ibi_ms: float) -> bool:
        p = self.policy
        if not (p.min_ibi_ms < ibi_ms < p.max_ibi_ms):
            return False
        if self._recent:
            med = statistics.median(self._recent)
            if abs(ibi_ms - med) / med > p.max_rel_jump:
                return False
        self._recent.append(ibi_ms)
        return True


def clean_ibi(series: IBISeries, policy: FilterPolicy = FilterPolicy()) -> IBISeries:
    """Drop artifact beats; raises :class:`SignalQualityError` above 50% loss."""
    cleaner = OnlineCleaner(policy)
    keep = np.fromiter(
        (cleaner.accept(float(v)) for v in series.ibi_ms), dtype=bool, count=len(series)
    )
    n_dropped = int((~keep).sum())
    if n_dropped > 0.5 * len(series):
        raise SignalQualityError(
            f"signal too corrupted: {n_dropped}/{len(series)} beats rejected "
            f"({series.subject_id}, condition {int(series.condition)})"
        )
    if n_dropped == 0:
        return series
    comfort = series.comfort[keep] if series.comfort is not None else None
    return IBISeries(
        subject_id=series.subject_id,
        condition=series.condition,
        t_ms=series.t_ms[keep],
        ibi_ms=series.ibi_ms[keep],
        comfort=comfort,
    )


def join_labels(
    series: IBISeries,
    annotations: Sequence[ComfortAnnotation],
    seed_duration_s: float = 300.0,
) -> IBISeries:
    """Attach a comfort value to every beat (last report at or before the beat).

    No interpolation: the label is carried forward. The subject must have at
    least one annotation no later than the end of the first feature window.
    """
    track = sorted(
        (a for a in annotations if a.subject_id == series.subject_id),
        key=lambda a: a.t_ms,
    )
    if not track:
        raise ValueError(f"no annotations for subject {series.subject_id}")
    cum = np.cumsum(series.ibi_ms)
    reach = np.nonzero(cum >= seed_duration_s * 1000.0)[0]
    first_window_end = series.t_ms[reach[0]] if reach.size else series.t_ms[-1]
    if track[0].t_ms > first_window_end:
        raise ValueError(
            f"no annotation at or before the first window end "
            f"(t={first_window_end:.0f} ms) for subject {series.subject_id}"
        )
    ann_t = np.array([a.t_ms for a in track])
    ann_c = np.array([a.comfort for a in track])
    pos = np.searchsorted(ann_t, series.t_ms, side="right") - 1
    comfort = np.where(pos >= 0, ann_c[np.clip(pos, 0, None)], np.nan)
    return replace(series, comfort=comfort)


def _fmt(x: float) -> str:
    # shortest decimal repr round-trips float64 exactly
    return repr(float(x))


def parse_ibi_dataset(
    ibi_path: str | Path,
    annotations_path: str | Path | None = None,
) -> tuple[list[IBISeries], list[ComfortAnnotation]]:
    """Read beat and (optionally) annotation CSVs.

    One series per (subject, condition) block; timestamps must increase
    strictly within a block. Errors name the offending 1-based file row.
    """
    ibi_path = Path(ibi_path)
    groups: dict[tuple[str, int], list[tuple[float, float]]] = {}
    with open(ibi_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetError(f"{ibi_path}: no records")
        expected = ["subject_id", "condition", "t_ms", "ibi_ms"]
        if [h.strip() for h in header] != expected:
            raise DatasetError(f"{ibi_path}: bad header {header!r}, expected {expected}")
        n_rows = 0
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DatasetError(f"{ibi_path}: row {lineno}: expected 4 fields, got {len(row)}")
            subject = row[0]
            try:
                cond_code = int(row[1])
            except ValueError:
                raise DatasetError(f"{ibi_path}: row {lineno}: bad condition {row[1]!r}") from None
            try:
                cond = ConditionLabel(cond_code)
            except ValueError:
                raise DatasetError(
                    f"{ibi_path}: row {lineno}: unknown condition code {cond_code}"
                ) from None
            try:
                t_ms = float(row[2])
                ibi_ms = float(row[3])
            except ValueError:
                raise DatasetError(f"{ibi_path}: row {lineno}: malformed number") from None
            block = groups.setdefault((subject, cond), [])
            if block and t_ms <= block[-1][0]:
                raise DatasetError(
                    f"{ibi_path}: row {lineno}: non-monotonic timestamp "
                    f"({t_ms} after {block[-1][0]})"
                )
            block.append((t_ms, ibi_ms))
            n_rows += 1
    if n_rows == 0:
        raise DatasetError(f"{ibi_path}: no records")

    series = [
        IBISeries(
            subject_id=subject,
            condition=ConditionLabel(cond),
            t_ms=np.array([t for t, _ in block]),
            ibi_ms=np.array([v for _, v in block]),
        )
        for (subject, cond), block in groups.items()
    ]

    annotations: list[ComfortAnnotation] = []
    if annotations_path is not None:
        annotations = _parse_annotations(Path(annotations_path))
    return series, annotations


def _parse_annotations(path: Path) -> list[ComfortAnnotation]:
    out: list[ComfortAnnotation] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["subject_id", "t_ms", "comfort", "sensation", "sweat"]
        if header is None or [h.strip() for h in header] != expected:
            raise DatasetError(f"{path}: bad header {header!r}, expected {expected}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise DatasetError(f"{path}: row {lineno}: expected 5 fields, got {len(row)}")
            try:
                out.append(
                    ComfortAnnotation(
                        subject_id=row[0],
                        t_ms=float(row[1]),
                        comfort=float(row[2]),
                        sensation=float(row[3]),
                        sweat=float(row[4]),
                    )
                )
            except ValueError:
                raise DatasetError(f"{path}: row {lineno}: malformed number") from None
    out.sort(key=lambda a: (a.subject_id, a.t_ms))
    return out


def write_ibi_dataset(
    series: Iterable[IBISeries],
    ibi_path: str | Path,
    annotations: Iterable[ComfortAnnotation] = (),
    annotations_path: str | Path | None = None,
) -> None:
    """Write the CSV pair; numbers use shortest round-trip formatting."""
    with open(ibi_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "condition", "t_ms", "ibi_ms"])
        for s in series:
            for t, v in zip(s.t_ms, s.ibi_ms):
                writer.writerow([s.subject_id, int(s.condition), _fmt(t), _fmt(v)])
    if annotations_path is not None:
        with open(annotations_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["subject_id", "t_ms", "comfort", "sensation", "sweat"])
            for a in sorted(annotations, key=lambda a: (a.subject_id, a.t_ms)):
                writer.writerow(
                    [a.subject_id, _fmt(a.t_ms), _fmt(a.comfort), _fmt(a.sensation), _fmt(a.sweat)]
                )


def import_external_dataset(
    beats_path: str | Path,
    mapping_path: str | Path,
    annotations_path: str | Path | None = None,
) -> tuple[list[IBISeries], list[ComfortAnnotation]]:
    """Adapter for third-party IBI exports, driven by a column-mapping file.

    The mapping file is JSON::

        {
          "beats": {"subject_id": "...", "condition": "...", "t_ms": "...", "ibi_ms": "..."},
          "annotations": {"subject_id": "...", "t_ms": "...", "comfort": "...",
                          "sensation": "...", "sweat": "..."},
          "condition_values": {"<raw value>": 0, ...},   # optional
          "time_unit_ms": 1.0,                           # optional multiplier
          "ibi_unit_ms": 1.0
        }

    No default mapping is assumed; the schema of external releases must be
    declared explicitly.
    """
    with open(mapping_path, encoding="utf-8") as fh:
        mapping = json.load(fh)
    beat_cols = mapping["beats"]
    cond_map = {str(k): int(v) for k, v in mapping.get("condition_values", {}).items()}
    t_scale = float(mapping.get("time_unit_ms", 1.0))
    ibi_scale = float(mapping.get("ibi_unit_ms", 1.0))

    groups: dict[tuple[str, int], list[tuple[float, float]]] = {}
    with open(beats_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            try:
                subject = str(row[beat_cols["subject_id"]])
                raw_cond = str(row[beat_cols["condition"]])
                cond_code = cond_map[raw_cond] if cond_map else int(raw_cond)
                cond = ConditionLabel(cond_code)
                t_ms = float(row[beat_cols["t_ms"]]) * t_scale
                ibi_ms = float(row[beat_cols["ibi_ms"]]) * ibi_scale
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"{beats_path}: row {lineno}: {exc}") from None
            block = groups.setdefault((subject, int(cond)), [])
            if block and t_ms <= block[-1][0]:
                raise DatasetError(f"{beats_path}: row {lineno}: non-monotonic timestamp")
            block.append((t_ms, ibi_ms))
    if not groups:
        raise DatasetError(f"{beats_path}: no records")
    series = [
        IBISeries(
            subject_id=subject,
            condition=ConditionLabel(cond),
            t_ms=np.array([t for t, _ in block]),
            ibi_ms=np.array([v for _, v in block]),
        )
        for (subject, cond), block in groups.items()
    ]

    annotations: list[ComfortAnnotation] = []
    if annotations_path is not None and "annotations" in mapping:
        ann_cols = mapping["annotations"]
        with open(annotations_path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            for lineno, row in enumerate(reader, start=2):
                try:
                    annotations.append(
                        ComfortAnnotation(
                            subject_id=str(row[ann_cols["subject_id"]]),
                            t_ms=float(row[ann_cols["t_ms"]]) * t_scale,
                            comfort=float(row[ann_cols["comfort"]]),
                            sensation=float(row.get(ann_cols.get("sensation", ""), 5.0) or 5.0),
                            sweat=float(row.get(ann_cols.get("sweat", ""), 5.0) or 5.0),
                        )
                    )
                except (KeyError, TypeError, ValueError) as exc:
                    raise DatasetError(f"{annotations_path}: row {lineno}: {exc}") from None
        annotations.sort(key=lambda a: (a.subject_id, a.t_ms))
    return series, annotations
