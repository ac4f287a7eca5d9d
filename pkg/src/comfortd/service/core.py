"""Runtime engine: live sessions, sliding windows, prediction, feedback,
and background recalibration with an atomically-swapped model registry.

Framework-free; the HTTP layer in :mod:`comfortd.service.api` is a thin
adapter over this class. Predictions are bit-identical to the offline
pipeline because ingestion uses the same causal cleaner and the same
per-window feature kernel.
"""

from __future__ import annotations

import json
import math
import os
import secrets
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..evaluation import calibrate_model
from ..features import FEATURE_NAMES, FeatureMatrix, HRVWindow, feature_vector, seed_beat_count
from ..ingest import FilterPolicy, IBISample, OnlineCleaner
from ..model_io import load_model, save_model
from ..planner import Actuator, ActuatorPlan, DEFAULT_CATALOG, catalog_from_config, plan_actuation
from ..trees import EnsembleModel, predict

SEED_WINDOW_MS = 300000.0


class UnknownSessionError(KeyError):
    pass


class UnknownJobError(KeyError):
    pass


class WindowNotReadyError(RuntimeError):
    def __init__(self, seconds_remaining: float):
        super().__init__(f"insufficient data: {seconds_remaining:.1f}s of beats still needed")
        self.seconds_remaining = seconds_remaining


@dataclass
class ServiceConfig:
    generic_classifier_path: str
    generic_regressor_path: str
    generic_matrix_path: str
    persist_dir: str
    actuators: tuple[Actuator, ...] = DEFAULT_CATALOG
    recalibration_threshold: int = 400
    filter_policy: FilterPolicy = field(default_factory=FilterPolicy)

    @staticmethod
    def from_json(path: str | Path) -> "ServiceConfig":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        actuators = (
            catalog_from_config(raw["actuators"]) if "actuators" in raw else DEFAULT_CATALOG
        )
        policy = FilterPolicy(
            min_ibi_ms=float(raw.get("min_ibi_ms", 250.0)),
            max_ibi_ms=float(raw.get("max_ibi_ms", 3000.0)),
            max_rel_jump=float(raw.get("max_rel_jump", 0.2)),
        )
        return ServiceConfig(
            generic_classifier_path=raw["generic_classifier_path"],
            generic_regressor_path=raw["generic_regressor_path"],
            generic_matrix_path=raw["generic_matrix_path"],
            persist_dir=raw["persist_dir"],
            actuators=actuators,
            recalibration_threshold=int(raw.get("recalibration_threshold", 400)),
            filter_policy=policy,
        )


@dataclass
class ModelRecord:
    subject_id: str
    version: int
    status: str  # ACTIVE | RETIRED
    provenance: dict
    classifier_path: str
    regressor_path: str
    _classifier: Optional[EnsembleModel] = None
    _regressor: Optional[EnsembleModel] = None

    def classifier(self) -> EnsembleModel:
        if self._classifier is None:
            self._classifier = load_model(self.classifier_path)
        return self._classifier

    def regressor(self) -> EnsembleModel:
        if self._regressor is None:
            self._regressor = load_model(self.regressor_path)
        return self._regressor

    def public(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "model_version": self.version,
            "status": self.status,
            "provenance": self.provenance,
        }


@dataclass
class RecalibrationJob:
    job_id: str
    subject_id: str
    status: str = "queued"  # queued | running | succeeded | failed
    model_version: Optional[int] = None
    error: Optional[str] = None

    def public(self) -> dict:
        out = {"job_id": self.job_id, "subject_id": self.subject_id, "status": self.status}
        if self.model_version is not None:
            out["model_version"] = self.model_version
        if self.error is not None:
            out["error"] = self.error
        return out


class Session:
    """Single-writer state for one occupant stream."""

    def __init__(self, session_id: str, subject_id: str, policy: FilterPolicy):
        self.session_id = session_id
        self.subject_id = subject_id
        self.created_at = time.time()
        self.cleaner = OnlineCleaner(policy)
        self.t_ms: list[float] = []
        self.ibi_ms: list[float] = []
        self.accepted_ms = 0.0
        self.last_t_ms = -math.inf
        self.k: Optional[int] = None
        self.model_version_seen: Optional[int] = None
        self.lock = threading.Lock()

    @property
    def window_ready(self) -> bool:
        return self.accepted_ms >= SEED_WINDOW_MS

    def seconds_remaining(self) -> float:
        return max(0.0, (SEED_WINDOW_MS - self.accepted_ms) / 1000.0)

    def current_window(self) -> HRVWindow:
        if self.k is None:
            self.k = seed_beat_count(np.array(self.ibi_ms))
        ibi = np.array(self.ibi_ms[-self.k :])
        return HRVWindow(
            ibi_ms=ibi,
            window_index=len(self.ibi_ms) - self.k,
            end_t_ms=self.t_ms[-1],
            end_index=len(self.ibi_ms) - 1,
        )

    def trim(self) -> None:
        # the window needs the last k beats only; keep twice that
        if self.k is not None and len(self.ibi_ms) > 4 * self.k:
            keep = 2 * self.k
            self.ibi_ms = self.ibi_ms[-keep:]
            self.t_ms = self.t_ms[-keep:]


class ComfortService:
    """The long-running engine behind the HTTP API."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.persist_dir = Path(config.persist_dir)
        (self.persist_dir / "models").mkdir(parents=True, exist_ok=True)
        (self.persist_dir / "feedback").mkdir(parents=True, exist_ok=True)

        self.generic_classifier = load_model(config.generic_classifier_path)
        self.generic_regressor = load_model(config.generic_regressor_path)
        self.generic_matrix = FeatureMatrix.from_csv(config.generic_matrix_path)

        self.sessions: dict[str, Session] = {}
        self.jobs: dict[str, RecalibrationJob] = {}
        self.registry: dict[str, list[ModelRecord]] = {}
        # feedback buffer rows: {window_end_t, features, comfort, temp_adjust}
        self.feedback: dict[str, dict[float, dict]] = {}
        self.registry_lock = threading.RLock()
        self.jobs_lock = threading.Lock()
        self._threads: list[threading.Thread] = []
        self._load_state()

    # ------------------------------------------------------------- state

    def _registry_path(self) -> Path:
        return self.persist_dir / "registry.json"

    def _load_state(self) -> None:
        reg_path = self._registry_path()
        if reg_path.exists():
            raw = json.loads(reg_path.read_text(encoding="utf-8"))
            for subject, records in raw.items():
                self.registry[subject] = [
                    ModelRecord(
                        subject_id=subject,
                        version=r["version"],
                        status=r["status"],
                        provenance=r["provenance"],
                        classifier_path=r["classifier_path"],
                        regressor_path=r["regressor_path"],
                    )
                    for r in records
                ]
        for path in (self.persist_dir / "feedback").glob("*.jsonl"):
            subject = path.stem
            buf: dict[float, dict] = {}
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    row = json.loads(line)
                    buf[float(row["window_end_t"])] = row
            if buf:
                self.feedback[subject] = buf

    def _persist_registry(self) -> None:
        payload = {
            subject: [
                {
                    "version": r.version,
                    "status": r.status,
                    "provenance": r.provenance,
                    "classifier_path": r.classifier_path,
                    "regressor_path": r.regressor_path,
                }
                for r in records
            ]
            for subject, records in self.registry.items()
        }
        tmp = self._registry_path().with_suffix(".tmp")
        tmp.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
        os.replace(tmp, self._registry_path())

    def _append_feedback(self, subject: str, row: dict) -> None:
        path = self.persist_dir / "feedback" / f"{subject}.jsonl"
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(row, sort_keys=True) + "\n")

    # ----------------------------------------------------------- lookups

    def _session(self, session_id: str) -> Session:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise UnknownSessionError(f"unknown session {session_id}") from None

    def active_record(self, subject_id: str) -> Optional[ModelRecord]:
        with self.registry_lock:
            for record in reversed(self.registry.get(subject_id, [])):
                if record.status == "ACTIVE":
                    return record
        return None

    def active_version(self, subject_id: str) -> int:
        record = self.active_record(subject_id)
        return record.version if record is not None else 0  # 0 = generic

    # -------------------------------------------------------------- api

    def create_session(self, subject_id: str) -> str:
        session_id = secrets.token_hex(16)
        session = Session(session_id, subject_id, self.config.filter_policy)
        session.model_version_seen = self.active_version(subject_id)
        self.sessions[session_id] = session
        return session_id

    def ingest_ibi(self, session_id: str, samples: Sequence[IBISample]) -> dict:
        session = self._session(session_id)
        with session.lock:
            if samples:
                ts = [s.t_ms for s in samples]
                if any(b <= a for a, b in zip(ts, ts[1:])) or ts[0] <= session.last_t_ms:
                    raise ValueError(
                        "non-monotonic batch: timestamps must strictly extend the stream"
                    )
            accepted = 0
            rejected = 0
            for sample in samples:
                if session.cleaner.accept(float(sample.ibi_ms)):
                    session.t_ms.append(float(sample.t_ms))
                    session.ibi_ms.append(float(sample.ibi_ms))
                    session.accepted_ms += float(sample.ibi_ms)
                    accepted += 1
                else:
                    rejected += 1
                session.last_t_ms = float(sample.t_ms)
            if session.window_ready and session.k is None:
                session.k = seed_beat_count(np.array(session.ibi_ms))
            session.trim()
            return {
                "beats_accepted": accepted,
                "beats_rejected": rejected,
                "window_ready": session.window_ready,
            }

    def predict_comfort(self, session_id: str) -> dict:
        session = self._session(session_id)
        with session.lock:
            if not session.window_ready:
                raise WindowNotReadyError(session.seconds_remaining())
            window = session.current_window()
            vec, _ = feature_vector(window)
            record = self.active_record(session.subject_id)
            classifier = record.classifier() if record else self.generic_classifier
            regressor = record.regressor() if record else self.generic_regressor
            version = record.version if record else 0
            x = vec[None, :]
            labels, probs = predict(classifier, x, list(FEATURE_NAMES))
            comfort = float(predict(regressor, x, list(FEATURE_NAMES))[0])
            session.model_version_seen = version
            return {
                "comfort": comfort,
                "condition": int(labels[0]),
                "class_probs": [float(p) for p in probs[0]],
                "model_version": version,
                "window_end_t": float(window.end_t_ms),
            }

    def submit_feedback(
        self, session_id: str, comfort: float, temp_adjust: Optional[int] = None
    ) -> dict:
        if not 1.0 <= comfort <= 10.0:
            raise ValueError("comfort must lie in [1, 10]")
        session = self._session(session_id)
        with session.lock:
            if not session.window_ready:
                raise WindowNotReadyError(session.seconds_remaining())
            window = session.current_window()
            vec, _ = feature_vector(window)
            subject = session.subject_id
            row = {
                "window_end_t": float(window.end_t_ms),
                "features": [float(v) for v in vec],
                "comfort": float(comfort),
                "temp_adjust": temp_adjust,
                "session_id": session_id,
            }
        buf = self.feedback.setdefault(subject, {})
        # resubmissions on an unchanged window overwrite, not accumulate
        buf[row["window_end_t"]] = row
        self._append_feedback(subject, row)
        stored = len(buf)
        triggered = False
        if stored >= self.config.recalibration_threshold and not self._job_in_flight(subject):
            self._start_recalibration(subject)
            triggered = True
        return {"stored": stored, "recalibration_triggered": triggered}

    def plan(self, session_id: str, comfort_target: float) -> ActuatorPlan:
        prediction = self.predict_comfort(session_id)
        return plan_actuation(prediction["comfort"], comfort_target, self.config.actuators)

    def models(self, subject_id: str) -> list[dict]:
        with self.registry_lock:
            return [r.public() for r in self.registry.get(subject_id, [])]

    def job(self, job_id: str) -> dict:
        with self.jobs_lock:
            try:
                return self.jobs[job_id].public()
            except KeyError:
                raise UnknownJobError(f"unknown job {job_id}") from None

    # ---------------------------------------------------- recalibration

    def _job_in_flight(self, subject: str) -> bool:
        with self.jobs_lock:
            return any(
                j.subject_id == subject and j.status in ("queued", "running")
                for j in self.jobs.values()
            )

    def request_recalibration(self, subject_id: str) -> str:
        if not self.feedback.get(subject_id):
            raise ValueError(f"no feedback stored for subject {subject_id}")
        if self._job_in_flight(subject_id):
            raise ValueError(f"recalibration already in flight for {subject_id}")
        return self._start_recalibration(subject_id)

    def _start_recalibration(self, subject_id: str) -> str:
        job = RecalibrationJob(job_id=secrets.token_hex(8), subject_id=subject_id)
        with self.jobs_lock:
            self.jobs[job.job_id] = job
        thread = threading.Thread(target=self._run_recalibration, args=(job,), daemon=True)
        self._threads.append(thread)
        thread.start()
        return job.job_id

    def wait_for_jobs(self, timeout: float = 120.0) -> None:
        deadline = time.time() + timeout
        for thread in list(self._threads):
            thread.join(max(0.0, deadline - time.time()))
        self._threads = [t for t in self._threads if t.is_alive()]

    def _feedback_matrix(self, subject_id: str) -> FeatureMatrix:
        rows = sorted(self.feedback[subject_id].values(), key=lambda r: r["window_end_t"])
        X = np.array([r["features"] for r in rows], dtype=np.float64)
        n = len(rows)
        base_id = int(self.generic_matrix.row_ids.max()) + 1 if len(self.generic_matrix) else 0
        return FeatureMatrix(
            subject_ids=np.array([subject_id] * n, dtype=object),
            condition=np.full(n, -1, dtype=np.int64),  # feedback has no condition label
            comfort=np.array([r["comfort"] for r in rows]),
            window_index=np.arange(n, dtype=np.int64),
            X=X,
            feature_names=list(FEATURE_NAMES),
            row_ids=base_id + np.arange(n, dtype=np.int64),
        )

    def _run_recalibration(self, job: RecalibrationJob) -> None:
        job.status = "running"
        subject = job.subject_id
        try:
            calibration = self._feedback_matrix(subject)
            with self.registry_lock:
                version = max(
                    (r.version for r in self.registry.get(subject, [])), default=0
                ) + 1
            seed = int(self.generic_regressor.spec.seed) + version
            regressor = calibrate_model(
                self.generic_matrix, calibration, self.generic_regressor.spec, seed
            )
            regressor.training_meta["model_version"] = version

            subject_dir = self.persist_dir / "models" / subject
            subject_dir.mkdir(parents=True, exist_ok=True)
            regressor_path = subject_dir / f"v{version}_regress.tcm"
            save_model(regressor, regressor_path)

            record = ModelRecord(
                subject_id=subject,
                version=version,
                status="ACTIVE",
                provenance={
                    "generic_matrix": str(self.config.generic_matrix_path),
                    "calibration_samples": len(calibration),
                    "seed": seed,
                },
                # feedback carries comfort only, so classification stays generic
                classifier_path=str(self.config.generic_classifier_path),
                regressor_path=str(regressor_path),
                _regressor=regressor,
            )
            with self.registry_lock:
                for prior in self.registry.setdefault(subject, []):
                    prior.status = "RETIRED"
                self.registry[subject].append(record)
                self._persist_registry()
            job.model_version = version
            job.status = "succeeded"
        except Exception as exc:  # keep the prior model on any failure
            job.error = f"{type(exc).__name__}: {exc}"
            job.status = "failed"
