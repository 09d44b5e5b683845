/** Workbench state: everything the view shows derives from service
 * responses plus unsent local edits. The store never fabricates transcript
 * entries and never mutates conversation state except through the client. */

import {
  ApiError,
  LayoutStrip,
  ModelInfo,
  ReferenceTuple,
  SampleResponse,
  ScoreReport,
  ServiceClient,
  TranscriptTurn,
} from "./api";

export const MAX_REFERENCES = 8;

export interface SamplerControls {
  topP: number;
  temperature: number;
  maxNewTokens: number;
  seed: number;
}

export const DEFAULT_SAMPLER: SamplerControls = {
  topP: 0.95,
  temperature: 1.0,
  maxNewTokens: 48,
  seed: 0,
};

export interface ReferenceRow {
  parent: string;
  reply: string;
}

export type ConnectionStatus = "connecting" | "online" | "offline";

export class WorkbenchState {
  status: ConnectionStatus = "connecting";
  models: ModelInfo[] = [];
  selectedModel = "";
  speakers: string[] = [];
  sessionId: string | null = null;
  transcript: TranscriptTurn[] = [];
  references: Record<string, ReferenceTuple[]> = {};
  referenceDraft: Record<string, ReferenceRow[]> = {};
  sampler: SamplerControls = { ...DEFAULT_SAMPLER };
  target = "";
  pending = false;
  layout: LayoutStrip | null = null;
  lastSample: SampleResponse | null = null;
  lastScore: ScoreReport | null = null;
  banner: string | null = null;

  constructor(readonly client: ServiceClient) {}

  async connect(): Promise<void> {
    this.status = "connecting";
    try {
      const { models } = await this.client.listModels();
      this.models = models;
      this.status = "online";
      this.banner = null;
      if (models.length > 0 && !this.selectedModel) {
        this.selectedModel = models[0].model_id;
      }
    } catch (err) {
      this.status = "offline";
      this.banner = "service unreachable; check the server and retry";
      throw err;
    }
  }

  get canStart(): boolean {
    return this.status === "online" && this.models.length > 0 && !this.sessionId;
  }

  async startSession(speakers: string[]): Promise<void> {
    if (!this.selectedModel) {
      throw new Error("pick a model first");
    }
    const { session_id } = await this.client.createSession({
      model_id: this.selectedModel,
      speakers,
    });
    this.sessionId = session_id;
    this.speakers = [...speakers];
    this.target = speakers[0] ?? "";
    await this.refresh();
  }

  async refresh(): Promise<void> {
    if (!this.sessionId) return;
    const view = await this.client.getSession(this.sessionId);
    this.transcript = view.turns;
    this.references = view.references;
  }

  async composeTurn(author: string, text: string): Promise<void> {
    if (!this.sessionId) throw new Error("no active session");
    const view = await this.client.addTurn(this.sessionId, author, text);
    this.transcript = view.turns;
  }

  /** Reference editor -------------------------------------------------- */

  draftFor(author: string): ReferenceRow[] {
    if (!(author in this.referenceDraft)) {
      this.referenceDraft[author] = (this.references[author] ?? []).map((t) => ({
        parent: t.parent ?? "",
        reply: t.reply,
      }));
    }
    return this.referenceDraft[author];
  }

  canAddReferenceRow(author: string): boolean {
    return this.draftFor(author).length < MAX_REFERENCES;
  }

  addReferenceRow(author: string): boolean {
    const rows = this.draftFor(author);
    if (rows.length >= MAX_REFERENCES) {
      this.banner = `at most ${MAX_REFERENCES} reference tuples per speaker`;
      return false; // the form blocks a ninth row before the service sees it
    }
    rows.push({ parent: "", reply: "" });
    return true;
  }

  async saveReferences(author: string): Promise<number> {
    if (!this.sessionId) throw new Error("no active session");
    const rows = this.draftFor(author).filter((r) => r.reply.trim().length > 0);
    const tuples: ReferenceTuple[] = rows.map((row, i) => ({
      parent: row.parent.trim() ? row.parent : null,
      reply: row.reply,
      reply_id: `ui/${author}/${i}`,
      score: rows.length - i,
    }));
    const saved = await this.client.setReferences(this.sessionId, author, tuples);
    this.references[author] = tuples;
    return saved.count;
  }

  /** Generation -------------------------------------------------------- */

  get canGenerate(): boolean {
    return this.sessionId !== null && !this.pending && this.target.length > 0;
  }

  async steerGeneration(): Promise<SampleResponse> {
    if (!this.sessionId) throw new Error("no active session");
    if (this.pending) throw new Error("a generation is already in flight");
    this.pending = true;
    try {
      const response = await this.client.sampleNext(this.sessionId, {
        target: this.target,
        top_p: this.sampler.topP,
        temperature: this.sampler.temperature,
        max_new_tokens: this.sampler.maxNewTokens,
        seed: this.sampler.seed,
      });
      this.transcript = response.transcript;
      this.layout = response.layout;
      this.lastSample = response;
      this.banner = null;
      return response;
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.banner = `context full: ${err.message}`;
      } else if (err instanceof ApiError) {
        this.banner = err.message;
      }
      throw err;
    } finally {
      this.pending = false;
    }
  }

  async scoreTranscript(): Promise<ScoreReport> {
    const report = await this.client.score({
      model_id: this.selectedModel,
      conversation: this.transcript.map((t) => ({ author: t.author, text: t.text })),
      references: this.references,
    });
    this.lastScore = report;
    return report;
  }
}
