import json
import threading
import time

import numpy as np
import pytest

from comfortd.features import FEATURE_NAMES, extract_feature_matrix, make_windows, feature_vector
from comfortd.ingest import ConditionLabel, IBISample, clean_ibi, join_labels
from comfortd.model_io import save_model
from comfortd.service.core import (
    ComfortService,
    ServiceConfig,
    UnknownSessionError,
    WindowNotReadyError,
)
from comfortd.trees import EnsembleKind, EnsembleSpec, Task, fit_ensemble, predict

LIVE_SUBJECT = "S05"


def build_service_dir(tmp_path, small_cohort, threshold=60):
    """Generic models trained without LIVE_SUBJECT, plus a service config."""
    series, annotations, _ = small_cohort
    labeled = [join_labels(clean_ibi(s), annotations) for s in series]
    matrix = extract_feature_matrix([s for s in labeled if s.subject_id != LIVE_SUBJECT])

    spec_c = EnsembleSpec(EnsembleKind.EXTRA_TREES, Task.CLASSIFY, n_estimators=20, seed=3)
    spec_r = EnsembleSpec(EnsembleKind.EXTRA_TREES, Task.REGRESS, n_estimators=20, seed=3)
    clf = fit_ensemble(matrix.X, matrix.condition, spec_c, matrix.feature_names)
    reg = fit_ensemble(matrix.X, matrix.comfort, spec_r, matrix.feature_names)

    data_dir = tmp_path / "svc"
    data_dir.mkdir(exist_ok=True)
    save_model(clf, data_dir / "classify.tcm")
    save_model(reg, data_dir / "regress.tcm")
    matrix.to_csv(data_dir / "generic.csv")
    config = ServiceConfig(
        generic_classifier_path=str(data_dir / "classify.tcm"),
        generic_regressor_path=str(data_dir / "regress.tcm"),
        generic_matrix_path=str(data_dir / "generic.csv"),
        persist_dir=str(data_dir / "state"),
        recalibration_threshold=threshold,
    )
    live = [s for s in labeled if s.subject_id == LIVE_SUBJECT]
    return config, live


@pytest.fixture(scope="module")
def service_env(tmp_path_factory, small_cohort):
    tmp_path = tmp_path_factory.mktemp("service")
    config, live = build_service_dir(tmp_path, small_cohort)
    return ComfortService(config), config, live


def stream_series(service, session_id, series, upto=None):
    n = upto if upto is not None else len(series)
    batch = [IBISample(t_ms=float(series.t_ms[i]), ibi_ms=float(series.ibi_ms[i])) for i in range(n)]
    return service.ingest_ibi(session_id, batch)


# ---------------------------------------------------------------- sessions


def test_session_ids_unguessable(service_env):
    service, _, _ = service_env
    a = service.create_session("X")
    b = service.create_session("X")
    assert a != b
    assert len(a) == 32  # 128 bits hex
    assert service.sessions[a].model_version_seen == 0


def test_unknown_session(service_env):
    service, _, _ = service_env
    with pytest.raises(UnknownSessionError):
        service.ingest_ibi("nope", [])


def test_ingest_window_ready_at_301_seconds(service_env):
    service, _, _ = service_env
    sid = service.create_session("Y")
    samples = [IBISample(t_ms=1000.0 * (i + 1), ibi_ms=1000.0) for i in range(301)]
    ack = service.ingest_ibi(sid, samples)
    assert ack == {"beats_accepted": 301, "beats_rejected": 0, "window_ready": True}


def test_ingest_empty_batch(service_env):
    service, _, _ = service_env
    sid = service.create_session("Y")
    ack = service.ingest_ibi(sid, [])
    assert ack == {"beats_accepted": 0, "beats_rejected": 0, "window_ready": False}


def test_ingest_rejects_artifact_beat(service_env):
    service, _, _ = service_env
    sid = service.create_session("Y")
    service.ingest_ibi(sid, [IBISample(t_ms=800.0 * (i + 1), ibi_ms=800.0) for i in range(15)])
    ack = service.ingest_ibi(sid, [IBISample(t_ms=17000.0, ibi_ms=5000.0)])
    assert ack["beats_rejected"] == 1


def test_ingest_rejects_non_monotonic_batch(service_env):
    service, _, _ = service_env
    sid = service.create_session("Y")
    service.ingest_ibi(sid, [IBISample(t_ms=800.0, ibi_ms=800.0)])
    with pytest.raises(ValueError, match="non-monotonic"):
        service.ingest_ibi(sid, [IBISample(t_ms=700.0, ibi_ms=750.0)])


def test_predict_before_ready_reports_remaining(service_env):
    service, _, _ = service_env
    sid = service.create_session("Y")
    service.ingest_ibi(sid, [IBISample(t_ms=1000.0 * (i + 1), ibi_ms=1000.0) for i in range(100)])
    with pytest.raises(WindowNotReadyError) as err:
        service.predict_comfort(sid)
    assert err.value.seconds_remaining == pytest.approx(200.0)


# ---------------------------------------------------------------- equivalence


def test_online_prediction_matches_offline_pipeline(service_env):
    service, _, live = service_env
    series = live[0]
    sid = service.create_session(LIVE_SUBJECT)
    # feed in uneven chunks to exercise batch handling
    idx = 0
    rng = np.random.default_rng(0)
    while idx < len(series):
        step = int(rng.integers(1, 40))
        batch = [
            IBISample(t_ms=float(series.t_ms[i]), ibi_ms=float(series.ibi_ms[i]))
            for i in range(idx, min(idx + step, len(series)))
        ]
        service.ingest_ibi(sid, batch)
        idx += step
    online = service.predict_comfort(sid)

    clean = clean_ibi(series, service.config.filter_policy)
    windows = make_windows(clean)
    vec, _ = feature_vector(windows[-1])
    labels, probs = predict(service.generic_classifier, vec[None, :], list(FEATURE_NAMES))
    comfort = float(predict(service.generic_regressor, vec[None, :], list(FEATURE_NAMES))[0])

    assert online["comfort"] == comfort  # bit-exact
    assert online["condition"] == int(labels[0])
    assert online["class_probs"] == [float(p) for p in probs[0]]
    assert online["window_end_t"] == float(clean.t_ms[-1])


def test_prediction_idempotent_without_new_beats(service_env):
    service, _, live = service_env
    sid = service.create_session(LIVE_SUBJECT)
    stream_series(service, sid, live[0], upto=len(live[0]) - 20)
    first = service.predict_comfort(sid)
    second = service.predict_comfort(sid)
    assert first == second


# ---------------------------------------------------------------- feedback


def test_feedback_requires_window(service_env):
    service, _, _ = service_env
    sid = service.create_session("Z")
    with pytest.raises(WindowNotReadyError):
        service.submit_feedback(sid, 5.0)


def test_feedback_validates_range(service_env):
    service, _, live = service_env
    sid = service.create_session(LIVE_SUBJECT)
    stream_series(service, sid, live[0], upto=len(live[0]) - 20)
    with pytest.raises(ValueError, match="comfort"):
        service.submit_feedback(sid, 12.0)


def test_feedback_dedup_on_unchanged_window(tmp_path, small_cohort):
    config, live = build_service_dir(tmp_path, small_cohort, threshold=10_000)
    service = ComfortService(config)
    sid = service.create_session(LIVE_SUBJECT)
    n = len(live[0]) - 5
    stream_series(service, sid, live[0], upto=n)
    first = service.submit_feedback(sid, 5.0)
    second = service.submit_feedback(sid, 6.0)
    assert first["stored"] == 1
    assert second["stored"] == 1  # same window: replaced, not appended
    service.ingest_ibi(
        sid, [IBISample(t_ms=float(live[0].t_ms[n]), ibi_ms=float(live[0].ibi_ms[n]))]
    )
    third = service.submit_feedback(sid, 6.5)
    assert third["stored"] == 2


def test_feedback_survives_restart(tmp_path, small_cohort):
    config, live = build_service_dir(tmp_path, small_cohort, threshold=10_000)
    service = ComfortService(config)
    sid = service.create_session(LIVE_SUBJECT)
    n = len(live[0]) - 5
    stream_series(service, sid, live[0], upto=n)
    for i in range(5):
        service.ingest_ibi(
            sid,
            [IBISample(t_ms=float(live[0].t_ms[n + i]), ibi_ms=float(live[0].ibi_ms[n + i]))],
        )
        service.submit_feedback(sid, 5.0 + 0.1 * i)

    reborn = ComfortService(config)
    assert len(reborn.feedback[LIVE_SUBJECT]) == 5


# ------------------------------------------------------------ recalibration


def test_recalibration_flow_improves_live_subject(tmp_path, small_cohort):
    config, live = build_service_dir(tmp_path, small_cohort, threshold=60)
    service = ComfortService(config)
    session = service.create_session(LIVE_SUBJECT)
    series = live[0]

    truth_by_window_end = {}
    windows = make_windows(clean_ibi(series, config.filter_policy))
    clean = clean_ibi(series, config.filter_policy)
    for w in windows:
        truth_by_window_end[float(w.end_t_ms)] = float(clean.comfort[w.end_index])

    warmup = len(windows[0].ibi_ms)
    stream_series(service, session, series, upto=warmup)
    triggered = False
    idx = warmup
    while idx < warmup + 60:
        prediction_t = float(series.t_ms[idx - 1])
        ack = service.submit_feedback(session, truth_by_window_end[prediction_t])
        triggered = triggered or ack["recalibration_triggered"]
        service.ingest_ibi(
            session, [IBISample(t_ms=float(series.t_ms[idx]), ibi_ms=float(series.ibi_ms[idx]))]
        )
        idx += 1
    assert triggered
    service.wait_for_jobs()
    records = service.models(LIVE_SUBJECT)
    assert [r["model_version"] for r in records] == [1]
    assert records[0]["status"] == "ACTIVE"
    assert records[0]["provenance"]["calibration_samples"] == 60

    # held-back remainder of the stream: the personalized model must beat the
    # generic one it replaced
    held = [w for w in windows if w.window_index >= idx - warmup]
    X = np.array([feature_vector(w)[0] for w in held])
    truths = np.array([truth_by_window_end[float(w.end_t_ms)] for w in held])
    generic_pred = predict(service.generic_regressor, X, list(FEATURE_NAMES))
    record = service.active_record(LIVE_SUBJECT)
    personal_pred = predict(record.regressor(), X, list(FEATURE_NAMES))
    rmse = lambda p: float(np.sqrt(np.mean((p - truths) ** 2)))
    assert rmse(personal_pred) < rmse(generic_pred)

    # live predictions now report the new version
    out = service.predict_comfort(session)
    assert out["model_version"] == 1


def test_recalibrate_requires_feedback(service_env):
    service, _, _ = service_env
    with pytest.raises(ValueError, match="no feedback"):
        service.request_recalibration("nobody")


def test_concurrent_predict_during_recalibration(tmp_path, small_cohort):
    config, live = build_service_dir(tmp_path, small_cohort, threshold=10_000)
    service = ComfortService(config)
    sid = service.create_session(LIVE_SUBJECT)
    n = len(live[0]) - 10
    stream_series(service, sid, live[0], upto=n)
    for i in range(10):
        service.ingest_ibi(
            sid,
            [IBISample(t_ms=float(live[0].t_ms[n + i]), ibi_ms=float(live[0].ibi_ms[n + i]))],
        )
        service.submit_feedback(sid, 5.0)

    errors = []
    versions = []
    stop = threading.Event()

    def hammer():
        while not stop.is_set():
            try:
                versions.append(service.predict_comfort(sid)["model_version"])
            except Exception as exc:  # noqa: BLE001
                errors.append(exc)

    thread = threading.Thread(target=hammer)
    thread.start()
    service.request_recalibration(LIVE_SUBJECT)
    service.wait_for_jobs()
    time.sleep(0.05)
    stop.set()
    thread.join()
    assert not errors
    assert versions == sorted(versions)  # active version only moves forward
    assert versions[-1] == 1


# ---------------------------------------------------------------- planning


def test_plan_uses_current_prediction(service_env):
    service, _, live = service_env
    sid = service.create_session(LIVE_SUBJECT)
    stream_series(service, sid, live[0], upto=len(live[0]) - 20)
    prediction = service.predict_comfort(sid)
    plan = service.plan(sid, comfort_target=1.0)
    assert plan.total_power_w == 0.0  # target below the current state
    plan = service.plan(sid, comfort_target=min(10.0, prediction["comfort"] + 1.0))
    assert plan.predicted_comfort_after >= min(10.0, prediction["comfort"] + 1.0) - 1e-9 or plan.target_unmet


def test_config_json_roundtrip(tmp_path, small_cohort):
    config, _ = build_service_dir(tmp_path, small_cohort)
    raw = {
        "generic_classifier_path": config.generic_classifier_path,
        "generic_regressor_path": config.generic_regressor_path,
        "generic_matrix_path": config.generic_matrix_path,
        "persist_dir": config.persist_dir,
        "recalibration_threshold": 123,
        "actuators": [
            {"name": "FAN", "power_w": [0, 10], "comfort_delta": [0, 1.0]},
        ],
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(raw))
    loaded = ServiceConfig.from_json(path)
    assert loaded.recalibration_threshold == 123
    assert loaded.actuators[0].name == "FAN"
    ComfortService(loaded)  # constructible
