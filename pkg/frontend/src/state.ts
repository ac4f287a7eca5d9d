// Dashboard view-state machine: warming-up -> live -> recalibrating -> live.
// Pure reducers over immutable snapshots so every transition is unit-testable.

import type { ActuationPlan, FeedbackAck, Prediction } from "./api.js";

export type Phase = "connecting" | "warming-up" | "live" | "recalibrating";

export interface ViewState {
  phase: Phase;
  prediction: Prediction | null;
  plan: ActuationPlan | null;
  secondsRemaining: number;
  stored: number;
  threshold: number;
  connectionOk: boolean;
  toast: string | null;
}

export const CALIBRATION_THRESHOLD = 400;

export function initialState(threshold: number = CALIBRATION_THRESHOLD): ViewState {
  return {
    phase: "connecting",
    prediction: null,
    plan: null,
    secondsRemaining: 0,
    stored: 0,
    threshold,
    connectionOk: true,
    toast: null,
  };
}

export function onWarmingUp(state: ViewState, secondsRemaining: number): ViewState {
  if (state.phase === "live" || state.phase === "recalibrating") {
    // a live session never regresses to warm-up; treat as a transient
    return { ...state, connectionOk: true };
  }
  return { ...state, phase: "warming-up", secondsRemaining, connectionOk: true, toast: null };
}

export function onPrediction(
  state: ViewState,
  prediction: Prediction,
  plan: ActuationPlan | null
): ViewState {
  // discard responses older than what is already on screen
  if (state.prediction && prediction.window_end_t < state.prediction.window_end_t) {
    return state;
  }
  let toast: string | null = null;
  let phase: Phase = "live";
  if (state.prediction && prediction.model_version > state.prediction.model_version) {
    toast = `model updated to v${prediction.model_version}`;
  } else if (state.phase === "recalibrating") {
    phase = "recalibrating"; // stay until the version bump arrives
  }
  return {
    ...state,
    phase,
    prediction,
    plan: plan ?? state.plan,
    secondsRemaining: 0,
    connectionOk: true,
    toast,
  };
}

export function onFeedbackAck(state: ViewState, ack: FeedbackAck): ViewState {
  const phase =
    ack.recalibration_triggered || ack.stored >= state.threshold ? "recalibrating" : state.phase;
  return { ...state, stored: ack.stored, phase };
}

export function onConnectionError(state: ViewState): ViewState {
  return { ...state, connectionOk: false };
}

export function dismissToast(state: ViewState): ViewState {
  return { ...state, toast: null };
}

export function countdownLabel(secondsRemaining: number): string {
  const total = Math.max(0, Math.ceil(secondsRemaining));
  const minutes = Math.floor(total / 60);
  const seconds = total % 60;
  return `${String(minutes).padStart(2, "0")}:${String(seconds).padStart(2, "0")}`;
}

export const CONDITION_NAMES: Record<number, string> = {
  0: "very hot, cooler on",
  1: "very hot, no cooler",
  2: "hot, no cooler",
};
