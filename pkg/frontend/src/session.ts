// Console state machine. Holds exactly what the service sent plus the local
// view state (zoom, rotation, pending answers); true labels never exist on
// this side of the wire, so there is nothing to cache or leak.

import { ApiClient, DeckExhausted, TrialPayload } from "./api.js";

export const MIN_ZOOM = 1;
export const MAX_ZOOM = 8;
export const ROTATION_STEP = 90;

export type Phase = "idle" | "trial" | "done" | "error";

export interface TrialView {
  payload: TrialPayload;
  zoom: number;
  rotation: number; // degrees, multiples of 90
  answers: Record<string, string>;
}

export class SessionController {
  phase: Phase = "idle";
  sessionId = "";
  itemCount = 0;
  answeredCount = 0;
  trial: TrialView | null = null;
  errorMessage = "";
  report: import("./api.js").SessionReportPayload | null = null;

  constructor(private client: ApiClient) {}

  async start(opts: Parameters<ApiClient["createSession"]>[0]): Promise<void> {
    const info = await this.client.createSession(opts);
    this.attach(info.session_id, info.item_count);
    await this.advance();
  }

  /** Join an existing session (e.g. after a reload). */
  attach(sessionId: string, itemCount: number): void {
    this.sessionId = sessionId;
    this.itemCount = itemCount;
    this.answeredCount = 0;
    this.report = null;
    this.phase = "idle";
  }

  private freshView(payload: TrialPayload): TrialView {
    return { payload, zoom: MIN_ZOOM, rotation: 0, answers: {} };
  }

  async advance(): Promise<void> {
    try {
      const payload = await this.client.nextTrial(this.sessionId);
      this.trial = this.freshView(payload);
      this.phase = "trial";
    } catch (err) {
      if (err instanceof DeckExhausted) {
        this.trial = null;
        this.phase = "done";
        this.report = await this.client.report(this.sessionId);
        return;
      }
      this.trial = null;
      this.phase = "error";
      this.errorMessage = err instanceof Error ? err.message : String(err);
    }
  }

  // -- view manipulation ----------------------------------------------------

  zoomIn(): void {
    if (this.trial) this.trial.zoom = Math.min(MAX_ZOOM, this.trial.zoom * 2);
  }

  zoomOut(): void {
    if (this.trial) this.trial.zoom = Math.max(MIN_ZOOM, this.trial.zoom / 2);
  }

  rotate(): void {
    if (this.trial) this.trial.rotation = (this.trial.rotation + ROTATION_STEP) % 360;
  }

  choose(questionId: string, option: string): void {
    if (!this.trial) return;
    const question = this.trial.payload.questions.find(q => q.id === questionId);
    if (!question) throw new Error(`unknown question ${questionId}`);
    if (!question.options.includes(option)) {
      throw new Error(`option ${option} not offered for ${questionId}`);
    }
    this.trial.answers[questionId] = option;
  }

  /** Every configured question must be answered before submission. */
  canSubmit(): boolean {
    if (!this.trial) return false;
    return this.trial.payload.questions.every(q => this.trial!.answers[q.id] !== undefined);
  }

  /**
   * Post the current answers and move on. Safe to call twice: the service
   * rejects the duplicate and the client treats that as recorded.
   */
  async submit(): Promise<void> {
    if (!this.trial) throw new Error("no active trial");
    if (!this.canSubmit()) throw new Error("answer every question before submitting");
    const { payload, answers } = this.trial;
    await this.client.submitResponse(this.sessionId, payload.index, answers);
    this.answeredCount += 1;
    await this.advance();
  }

  /** Keyboard shortcuts: R/S answer realness, T/N answer pathology. */
  handleKey(key: string): void {
    if (!this.trial) return;
    const lower = key.toLowerCase();
    const mapping: Record<string, [string, number]> = {
      r: ["realness", 0], s: ["realness", 1],
      t: ["pathology", 0], n: ["pathology", 1],
    };
    if (lower in mapping) {
      const [qid, optionIndex] = mapping[lower];
      const question = this.trial.payload.questions.find(q => q.id === qid);
      if (question) this.choose(qid, question.options[optionIndex]);
      return;
    }
    if (key === "+") this.zoomIn();
    if (key === "-") this.zoomOut();
    if (lower === "o") this.rotate();
  }
}
