// Entry point: bind the client, the state machine, and the DOM together.

import { ComfortClient, WarmingUpError } from "./api.js";
import {
  ViewState,
  dismissToast,
  initialState,
  onConnectionError,
  onFeedbackAck,
  onPrediction,
  onWarmingUp,
} from "./state.js";
import { buildDashboard, render } from "./ui.js";

const POLL_PERIOD_MS = 5000;
const COMFORT_TARGET = 8.0;
const TOAST_MS = 4000;

export async function startDashboard(
  root: HTMLElement,
  baseUrl: string,
  subjectId: string
): Promise<{ stop: () => void }> {
  const client = new ComfortClient(baseUrl);
  const controls = buildDashboard(root);
  let state: ViewState = initialState();
  let stopped = false;
  let backoff = POLL_PERIOD_MS;

  const update = (next: ViewState) => {
    state = next;
    render(state, root);
    if (state.toast !== null) {
      setTimeout(() => update(dismissToast(state)), TOAST_MS);
    }
  };

  const sessionId = await client.createSession(subjectId);

  const poll = async () => {
    if (stopped) return;
    try {
      const prediction = await client.getComfort(sessionId);
      const plan = await client.getActuation(sessionId, COMFORT_TARGET);
      backoff = POLL_PERIOD_MS;
      update(onPrediction(state, prediction, plan));
    } catch (err) {
      if (err instanceof WarmingUpError) {
        backoff = POLL_PERIOD_MS;
        update(onWarmingUp(state, err.secondsRemaining));
      } else {
        backoff = Math.min(backoff * 2, 60_000); // retry later, flag staleness
        update(onConnectionError(state));
      }
    }
    if (!stopped) setTimeout(poll, backoff);
  };

  controls.submit.addEventListener("click", async () => {
    controls.submit.disabled = true;
    controls.note.textContent = "";
    try {
      const ack = await client.submitFeedback(
        sessionId,
        Number(controls.slider.value),
        Number(controls.tempAdjust.value)
      );
      update(onFeedbackAck(state, ack));
    } catch (err) {
      controls.note.textContent = `not recorded: ${(err as Error).message}`;
    } finally {
      controls.submit.disabled = false;
    }
  });

  void poll();
  return {
    stop: () => {
      stopped = true;
    },
  };
}

declare global {
  interface Window {
    startDashboard: typeof startDashboard;
  }
}

if (typeof window !== "undefined" && typeof document !== "undefined") {
  window.startDashboard = startDashboard;
  const params = new URLSearchParams(window.location.search);
  const root = document.getElementById("app");
  if (root && params.get("autostart") !== "0") {
    void startDashboard(
      root,
      params.get("api") ?? "http://127.0.0.1:8764",
      params.get("subject") ?? "occupant-1"
    );
  }
}
