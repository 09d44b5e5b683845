/** A canned-response service double for unit tests. It implements the same
 * documented endpoints; anything else 404s so stray traffic is caught. */

import type { LayoutStrip, ReferenceTuple, TranscriptTurn } from "../src/api";

export interface FakeServiceOptions {
  offline?: boolean;
}

export function makeLayout(refLen: number, convLen: number, generatedFrom?: number): LayoutStrip {
  const n = refLen + convLen;
  return {
    token_ids: Array.from({ length: n }, (_, i) => i + 10),
    type_ids: Array.from({ length: n }, (_, i) => (i < refLen ? (i % 2 ? 1 : 0) : i % 2 ? 2 : 3)),
    position_ids: Array.from({ length: n }, (_, i) => i),
    loss_mask: Array.from({ length: n }, (_, i) => (i >= refLen && i % 2 === 1 ? 1 : 0)),
    ref_len: refLen,
    conv_len: convLen,
    generated_from: generatedFrom ?? n - 2,
  };
}

export class FakeService {
  sessions = new Map<string, { speakers: string[]; turns: TranscriptTurn[]; references: Record<string, ReferenceTuple[]> }>();
  nextSession = 1;
  sampleCalls = 0;
  offline: boolean;

  constructor(options: FakeServiceOptions = {}) {
    this.offline = options.offline ?? false;
  }

  fetch = async (url: string | URL | Request, init?: RequestInit): Promise<Response> => {
    if (this.offline) {
      throw new TypeError("fetch failed");
    }
    const href = typeof url === "string" ? url : url instanceof URL ? url.href : url.url;
    const path = new URL(href).pathname;
    const method = init?.method ?? "GET";
    const body = init?.body ? JSON.parse(String(init.body)) : undefined;
    const json = (status: number, payload: unknown) =>
      new Response(JSON.stringify(payload), { status, headers: { "Content-Type": "application/json" } });

    if (method === "GET" && path === "/v1/models") {
      return json(200, {
        models: [
          { model_id: "alpha", variant: "dec", hidden_size: 16, n_layers: 1, vocab_size: 300 },
          { model_id: "beta", variant: "s2s", hidden_size: 16, n_layers: 1, vocab_size: 300 },
        ],
      });
    }
    if (method === "POST" && path === "/v1/sessions") {
      const id = `s${this.nextSession++}`;
      this.sessions.set(id, { speakers: body.speakers, turns: [], references: {} });
      return json(201, { session_id: id });
    }
    const sessionMatch = path.match(/^\/v1\/sessions\/([^/]+)(\/.*)?$/);
    if (sessionMatch) {
      const session = this.sessions.get(sessionMatch[1]);
      if (!session) return json(404, { code: "unknown_session", message: "no such session" });
      const rest = sessionMatch[2] ?? "";
      if (method === "GET" && rest === "") {
        return json(200, {
          session_id: sessionMatch[1],
          model_id: "alpha",
          speakers: session.speakers,
          turns: session.turns,
          references: session.references,
        });
      }
      if (method === "POST" && rest === "/turns") {
        session.turns = [
          ...session.turns,
          { comment_id: `c${session.turns.length}`, author: body.author, text: body.text, score: 0, origin: "human" },
        ];
        return json(200, { turns: session.turns, token_count: body.text.split(" ").length });
      }
      if (method === "PUT" && rest.startsWith("/references/")) {
        if (body.tuples.length > 8) {
          return json(422, { code: "too_many_references", message: "at most 8 reference tuples per author" });
        }
        session.references[rest.slice("/references/".length)] = body.tuples;
        return json(200, { author: rest.slice("/references/".length), count: body.tuples.length });
      }
      if (method === "POST" && rest === "/sample") {
        this.sampleCalls += 1;
        const text = `generated ${body.seed ?? 0} for ${body.target}`;
        session.turns = [
          ...session.turns,
          { comment_id: `g${session.turns.length}`, author: body.target, text, score: 0, origin: "model" },
        ];
        return json(200, {
          turn: { author: body.target, text },
          token_ids: [1, 2, 3],
          token_logprobs: [-0.1, -0.2, -0.3],
          logprob: -0.6,
          stopped_on_eot: true,
          layout: makeLayout(4, 8),
          transcript: session.turns,
        });
      }
    }
    if (method === "POST" && path === "/v1/score") {
      return json(200, {
        token_ppl: 12.5,
        conversation_ppl: 100.0,
        scored_tokens: 42,
        conversations: 1,
        per_speaker: [{ speaker: "alice", logprob: -10, tokens: 42, token_ppl: 12.5 }],
      });
    }
    return json(404, { code: "unknown_route", message: `no ${method} ${path}` });
  };
}
