// Typed client for the comfortd HTTP API. One in-flight request per endpoint
// is the caller's responsibility (the poller serializes its own calls).

export interface Prediction {
  comfort: number;
  condition: number;
  class_probs: number[];
  model_version: number;
  window_end_t: number;
}

export interface ActuationPlan {
  levels: Record<string, number>;
  total_power_w: number;
  predicted_comfort_after: number;
  target_unmet: boolean;
}

export interface FeedbackAck {
  stored: number;
  recalibration_triggered: boolean;
}

export class WarmingUpError extends Error {
  secondsRemaining: number;
  constructor(secondsRemaining: number) {
    super(`warming up: ${secondsRemaining}s remaining`);
    this.secondsRemaining = secondsRemaining;
  }
}

async function asJson(response: Response): Promise<any> {
  if (response.status === 409) {
    const body = await response.json();
    throw new WarmingUpError(body.seconds_remaining ?? 0);
  }
  if (!response.ok) {
    throw new Error(`${response.status}: ${await response.text()}`);
  }
  return response.json();
}

export class ComfortClient {
  constructor(private baseUrl: string) {}

  async createSession(subjectId: string): Promise<string> {
    const response = await fetch(`${this.baseUrl}/v1/sessions`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ subject_id: subjectId }),
    });
    const body = await asJson(response);
    return body.session_id;
  }

  async getComfort(sessionId: string): Promise<Prediction> {
    return asJson(await fetch(`${this.baseUrl}/v1/sessions/${sessionId}/comfort`));
  }

  async getActuation(sessionId: string, target: number): Promise<ActuationPlan> {
    return asJson(
      await fetch(`${this.baseUrl}/v1/sessions/${sessionId}/actuation?target=${target}`)
    );
  }

  async submitFeedback(
    sessionId: string,
    comfort: number,
    tempAdjust?: number
  ): Promise<FeedbackAck> {
    const body: Record<string, unknown> = { comfort };
    if (tempAdjust !== undefined && tempAdjust !== 0) {
      body.temp_adjust = tempAdjust;
    }
    const response = await fetch(`${this.baseUrl}/v1/sessions/${sessionId}/feedback`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    return asJson(response);
  }
}
