/** Typed client for the generation service. Every call the UI makes goes
 * through this module, and each request is appended to `requestLog`, so
 * tests can prove no traffic bypasses the documented endpoints. */

export interface ModelInfo {
  model_id: string;
  variant: string;
  hidden_size: number;
  n_layers: number;
  vocab_size: number;
}

export interface ReferenceTuple {
  parent: string | null;
  reply: string;
  reply_id: string;
  score: number;
}

export interface TranscriptTurn {
  comment_id: string;
  author: string;
  text: string;
  score: number;
  origin: "human" | "model";
}

export interface LayoutStrip {
  token_ids: number[];
  type_ids: number[];
  position_ids: number[];
  loss_mask: number[];
  ref_len: number;
  conv_len: number;
  generated_from: number;
}

export interface SessionView {
  session_id: string;
  model_id: string;
  speakers: string[];
  turns: TranscriptTurn[];
  references: Record<string, ReferenceTuple[]>;
}

export interface SampleRequest {
  target: string;
  top_p?: number;
  temperature?: number;
  max_new_tokens?: number;
  seed?: number;
  greedy?: boolean;
}

export interface SampleResponse {
  turn: { author: string; text: string };
  token_ids: number[];
  token_logprobs: number[];
  logprob: number;
  stopped_on_eot: boolean;
  layout: LayoutStrip;
  transcript: TranscriptTurn[];
}

export interface SpeakerScore {
  speaker: string;
  logprob: number;
  tokens: number;
  token_ppl: number;
}

export interface ScoreReport {
  token_ppl: number;
  conversation_ppl: number;
  scored_tokens: number;
  conversations: number;
  per_speaker: SpeakerScore[];
}

export interface LoggedRequest {
  method: string;
  path: string;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
    readonly field?: string,
  ) {
    super(message);
  }
}

type FetchLike = typeof fetch;

export class ServiceClient {
  readonly requestLog: LoggedRequest[] = [];

  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = fetch,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    this.requestLog.push({ method, path });
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers: body === undefined ? undefined : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = await response.json();
    if (!response.ok) {
      throw new ApiError(
        response.status,
        payload.code ?? "error",
        payload.message ?? response.statusText,
        payload.field,
      );
    }
    return payload as T;
  }

  listModels(): Promise<{ models: ModelInfo[] }> {
    return this.request("GET", "/v1/models");
  }

  createSession(body: {
    model_id: string;
    speakers: string[];
    conversation?: { author: string; text: string }[];
    references?: Record<string, ReferenceTuple[]>;
  }): Promise<{ session_id: string }> {
    return this.request("POST", "/v1/sessions", body);
  }

  getSession(sessionId: string): Promise<SessionView> {
    return this.request("GET", `/v1/sessions/${sessionId}`);
  }

  addTurn(sessionId: string, author: string, text: string): Promise<SessionView & { token_count: number }> {
    return this.request("POST", `/v1/sessions/${sessionId}/turns`, { author, text });
  }

  setReferences(
    sessionId: string,
    author: string,
    tuples: ReferenceTuple[],
  ): Promise<{ author: string; count: number }> {
    return this.request("PUT", `/v1/sessions/${sessionId}/references/${author}`, { tuples });
  }

  sampleNext(sessionId: string, body: SampleRequest): Promise<SampleResponse> {
    return this.request("POST", `/v1/sessions/${sessionId}/sample`, body);
  }

  score(body: {
    model_id: string;
    conversation: { author: string; text: string }[];
    references?: Record<string, ReferenceTuple[]>;
  }): Promise<ScoreReport> {
    return this.request("POST", "/v1/score", body);
  }
}

/** The endpoint surface the workbench is allowed to touch. */
export const DOCUMENTED_ENDPOINTS: RegExp[] = [
  /^GET \/v1\/models$/,
  /^POST \/v1\/sessions$/,
  /^GET \/v1\/sessions\/[^/]+$/,
  /^POST \/v1\/sessions\/[^/]+\/turns$/,
  /^PUT \/v1\/sessions\/[^/]+\/references\/[^/]+$/,
  /^POST \/v1\/sessions\/[^/]+\/sample$/,
  /^POST \/v1\/score$/,
];

export function isDocumented(entry: LoggedRequest): boolean {
  const line = `${entry.method} ${entry.path}`;
  return DOCUMENTED_ENDPOINTS.some((re) => re.test(line));
}
