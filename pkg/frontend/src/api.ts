// Typed client for the rating-session service. Submission is idempotent per
// (session, item): a retry after a network failure re-sends the same index,
// and a duplicate conflict from the server counts as recorded.

export interface Question {
  id: string;
  prompt: string;
  options: string[];
}

export interface TrialImage {
  width: number;
  height: number;
  pixels: string; // base64-encoded raw 8-bit grayscale, row-major
}

export interface TrialPayload {
  index: number;
  image: TrialImage;
  questions: Question[];
}

export interface SubmitAck {
  status: string;
  recorded: number;
  answered: number;
  total: number;
}

export interface SessionInfo {
  session_id: string;
  item_count: number;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class PayloadError extends Error {}

export class DeckExhausted extends Error {}

const TRIAL_KEYS = ["index", "image", "questions"].sort().join(",");

/** Reject anything that is not exactly the blinded trial shape. */
export function validateTrialPayload(raw: unknown): TrialPayload {
  if (typeof raw !== "object" || raw === null) {
    throw new PayloadError("trial payload is not an object");
  }
  const keys = Object.keys(raw as object).sort().join(",");
  if (keys !== TRIAL_KEYS) {
    throw new PayloadError(`unexpected trial fields: ${keys}`);
  }
  const p = raw as TrialPayload;
  if (!Number.isInteger(p.index) || p.index < 0) {
    throw new PayloadError("trial index missing or negative");
  }
  const img = p.image as TrialImage | undefined;
  if (!img || !Number.isInteger(img.width) || !Number.isInteger(img.height)
      || typeof img.pixels !== "string" || img.pixels.length === 0) {
    throw new PayloadError("trial image missing or malformed");
  }
  if (!Array.isArray(p.questions) || p.questions.length === 0) {
    throw new PayloadError("trial carries no questions");
  }
  for (const q of p.questions) {
    if (typeof q.id !== "string" || !Array.isArray(q.options) || q.options.length < 2) {
      throw new PayloadError(`malformed question ${JSON.stringify(q)}`);
    }
  }
  return p;
}

export class ApiClient {
  constructor(private baseUrl: string, private fetchImpl: FetchLike = fetch) {}

  private async json(path: string, init?: RequestInit): Promise<unknown> {
    const res = await this.fetchImpl(this.baseUrl + path, init);
    const body = await res.json();
    if (!res.ok) {
      const message = (body as { error?: string }).error ?? `HTTP ${res.status}`;
      if (res.status === 409) throw new ConflictError(message);
      throw new Error(message);
    }
    return body;
  }

  async createSession(opts: {
    realDir: string;
    syntheticDir: string;
    countReal: number;
    countSynthetic: number;
    seed?: number;
    questions?: string[];
  }): Promise<SessionInfo> {
    const body = {
      real_dir: opts.realDir,
      synthetic_dir: opts.syntheticDir,
      count_real: opts.countReal,
      count_synthetic: opts.countSynthetic,
      seed: opts.seed ?? 0,
      questions: opts.questions ?? ["realness"],
    };
    return (await this.json("/sessions", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    })) as SessionInfo;
  }

  async nextTrial(sessionId: string): Promise<TrialPayload> {
    try {
      const raw = await this.json(`/sessions/${sessionId}/next`);
      return validateTrialPayload(raw);
    } catch (err) {
      if (err instanceof ConflictError) throw new DeckExhausted(err.message);
      throw err;
    }
  }

  /** Post one response; retries transparently on network failure. */
  async submitResponse(sessionId: string, index: number,
                       answers: Record<string, string>,
                       retries = 2): Promise<SubmitAck> {
    const init: RequestInit = {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ index, answers }),
    };
    let lastError: unknown;
    for (let attempt = 0; attempt <= retries; attempt++) {
      try {
        return (await this.json(`/sessions/${sessionId}/responses`, init)) as SubmitAck;
      } catch (err) {
        if (err instanceof ConflictError) {
          // already recorded server-side: the retry raced an earlier success
          return { status: "ok", recorded: index, answered: -1, total: -1 };
        }
        lastError = err;
      }
    }
    throw lastError instanceof Error ? lastError : new Error(String(lastError));
  }

  async report(sessionId: string, partial = false): Promise<SessionReportPayload> {
    const suffix = partial ? "?partial=1" : "";
    return (await this.json(`/sessions/${sessionId}/report${suffix}`)) as SessionReportPayload;
  }
}

export class ConflictError extends Error {}

export interface QuestionReport {
  accuracy: number;
  cells: Record<string, number>;
  counts: Record<string, number>;
}

export interface SessionReportPayload {
  session_id: string;
  complete: boolean;
  answered: number;
  total: number;
  questions: Record<string, QuestionReport>;
}
