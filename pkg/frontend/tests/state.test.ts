import { describe, expect, it } from "vitest";

import type { Prediction } from "../src/api.js";
import {
  countdownLabel,
  dismissToast,
  initialState,
  onConnectionError,
  onFeedbackAck,
  onPrediction,
  onWarmingUp,
} from "../src/state.js";

function prediction(overrides: Partial<Prediction> = {}): Prediction {
  return {
    comfort: 7.2,
    condition: 2,
    class_probs: [0.1, 0.2, 0.7],
    model_version: 0,
    window_end_t: 1000,
    ...overrides,
  };
}

describe("view state machine", () => {
  it("follows warming-up -> live -> recalibrating -> live", () => {
    let s = initialState();
    expect(s.phase).toBe("connecting");

    s = onWarmingUp(s, 45);
    expect(s.phase).toBe("warming-up");
    expect(s.secondsRemaining).toBe(45);

    s = onPrediction(s, prediction(), null);
    expect(s.phase).toBe("live");

    s = onFeedbackAck(s, { stored: 400, recalibration_triggered: true });
    expect(s.phase).toBe("recalibrating");

    // staying on the same model version keeps the recalibrating phase
    s = onPrediction(s, prediction({ window_end_t: 2000 }), null);
    expect(s.phase).toBe("recalibrating");

    s = onPrediction(s, prediction({ window_end_t: 3000, model_version: 1 }), null);
    expect(s.phase).toBe("live");
    expect(s.toast).toBe("model updated to v1");

    s = dismissToast(s);
    expect(s.toast).toBeNull();
  });

  it("never regresses from live to warming-up", () => {
    let s = onPrediction(initialState(), prediction(), null);
    s = onWarmingUp(s, 10);
    expect(s.phase).toBe("live");
  });

  it("discards stale responses by window end time", () => {
    let s = onPrediction(initialState(), prediction({ window_end_t: 5000, comfort: 6 }), null);
    const stale = onPrediction(s, prediction({ window_end_t: 4000, comfort: 2 }), null);
    expect(stale.prediction!.comfort).toBe(6);
  });

  it("flags and clears connection problems", () => {
    let s = onPrediction(initialState(), prediction(), null);
    s = onConnectionError(s);
    expect(s.connectionOk).toBe(false);
    s = onPrediction(s, prediction({ window_end_t: 9000 }), null);
    expect(s.connectionOk).toBe(true);
  });

  it("counts stored samples toward the threshold", () => {
    let s = onPrediction(initialState(), prediction(), null);
    s = onFeedbackAck(s, { stored: 17, recalibration_triggered: false });
    expect(s.stored).toBe(17);
    expect(s.phase).toBe("live");
  });

  it("formats countdowns as mm:ss", () => {
    expect(countdownLabel(272)).toBe("04:32");
    expect(countdownLabel(0)).toBe("00:00");
    expect(countdownLabel(59.2)).toBe("01:00");
  });
});
