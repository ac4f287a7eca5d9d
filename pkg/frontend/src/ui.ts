// DOM construction and rendering. Every number shown comes straight from a
// service response field held in the view state.

import { CONDITION_NAMES, ViewState, countdownLabel } from "./state.js";

export interface Controls {
  root: HTMLElement;
  slider: HTMLInputElement;
  sliderValue: HTMLElement;
  tempAdjust: HTMLSelectElement;
  submit: HTMLButtonElement;
  note: HTMLElement;
}

export function buildDashboard(root: HTMLElement): Controls {
  root.innerHTML = `
    <div id="banner" class="banner" hidden>connection lost, showing stale data</div>
    <div id="toast" class="toast" hidden></div>
    <section id="status"><h2 id="phase"></h2><div id="countdown"></div></section>
    <section id="comfort">
      <div class="gauge"><div id="gauge-fill" class="gauge-fill"></div></div>
      <div id="comfort-value"></div>
      <div id="condition" class="badge"></div>
      <div id="model-version"></div>
    </section>
    <section id="plan"><h3>actuation plan</h3><table id="plan-table"></table>
      <div id="plan-power"></div></section>
    <section id="feedback">
      <h3>how do you feel? (1 = awful, 10 = great)</h3>
      <input id="comfort-slider" type="range" min="1" max="10" step="0.5" value="5.5" />
      <span id="slider-value">5.5</span>
      <label>temperature nudge
        <select id="temp-adjust">
          ${[-3, -2, -1, 0, 1, 2, 3]
            .map((v) => `<option value="${v}" ${v === 0 ? "selected" : ""}>${v > 0 ? "+" + v : v}</option>`)
            .join("")}
        </select>
      </label>
      <button id="submit-feedback">send</button>
      <div id="feedback-note"></div>
      <div class="progress"><div id="progress-fill" class="progress-fill"></div></div>
      <div id="progress-label"></div>
    </section>
  `;
  const slider = root.querySelector("#comfort-slider") as HTMLInputElement;
  const sliderValue = root.querySelector("#slider-value") as HTMLElement;
  slider.addEventListener("input", () => {
    sliderValue.textContent = slider.value;
  });
  return {
    root,
    slider,
    sliderValue,
    tempAdjust: root.querySelector("#temp-adjust") as HTMLSelectElement,
    submit: root.querySelector("#submit-feedback") as HTMLButtonElement,
    note: root.querySelector("#feedback-note") as HTMLElement,
  };
}

export function render(state: ViewState, root: HTMLElement): void {
  const q = (selector: string) => root.querySelector(selector) as HTMLElement;

  q("#banner").hidden = state.connectionOk;

  const toast = q("#toast");
  toast.hidden = state.toast === null;
  toast.textContent = state.toast ?? "";

  const phase = q("#phase");
  const countdown = q("#countdown");
  if (state.phase === "warming-up" || state.phase === "connecting") {
    phase.textContent =
      state.phase === "connecting" ? "connecting" : "warming up";
    countdown.textContent =
      state.phase === "warming-up" ? `${countdownLabel(state.secondsRemaining)} remaining` : "";
  } else {
    phase.textContent = state.phase === "recalibrating" ? "recalibrating" : "live";
    countdown.textContent = "";
  }

  if (state.prediction) {
    const comfort = state.prediction.comfort;
    (q("#gauge-fill") as HTMLElement).style.width = `${((comfort - 1) / 9) * 100}%`;
    q("#comfort-value").textContent = comfort.toFixed(1);
    q("#condition").textContent =
      CONDITION_NAMES[state.prediction.condition] ?? `class ${state.prediction.condition}`;
    q("#model-version").textContent = `model v${state.prediction.model_version}`;
  }

  const table = q("#plan-table");
  if (state.plan) {
    table.innerHTML =
      "<tr><th>device</th><th>level</th></tr>" +
      Object.entries(state.plan.levels)
        .map(([name, level]) => `<tr><td>${name}</td><td>${level}</td></tr>`)
        .join("");
    q("#plan-power").textContent =
      `${state.plan.total_power_w.toFixed(1)} W` +
      (state.plan.target_unmet ? " (target unreachable)" : "");
  }

  const fill = q("#progress-fill") as HTMLElement;
  const fraction = Math.min(1, state.stored / state.threshold);
  fill.style.width = `${fraction * 100}%`;
  q("#progress-label").textContent =
    state.phase === "recalibrating"
      ? `recalibrating with ${state.stored} samples`
      : `${state.stored} / ${state.threshold} calibration samples`;
}
