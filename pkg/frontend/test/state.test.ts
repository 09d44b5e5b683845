import { beforeEach, describe, expect, it } from "vitest";

import { ApiError, ServiceClient, isDocumented } from "../src/api";
import { DEFAULT_SAMPLER, MAX_REFERENCES, WorkbenchState } from "../src/state";
import { FakeService } from "./fakes";

function makeState(service = new FakeService()) {
  const client = new ServiceClient("http://fake.test", service.fetch);
  return { state: new WorkbenchState(client), client, service };
}

describe("connection", () => {
  it("populates the model picker when online", async () => {
    const { state } = makeState();
    await state.connect();
    expect(state.status).toBe("online");
    expect(state.models.map((m) => m.model_id)).toEqual(["alpha", "beta"]);
    expect(state.selectedModel).toBe("alpha");
  });

  it("shows an offline banner with retry on failure", async () => {
    const service = new FakeService({ offline: true });
    const { state } = makeState(service);
    await expect(state.connect()).rejects.toThrow();
    expect(state.status).toBe("offline");
    expect(state.banner).toMatch(/retry/);
    service.offline = false;
    await state.connect();
    expect(state.status).toBe("online");
    expect(state.banner).toBeNull();
  });
});

describe("sampler controls", () => {
  it("defaults top_p to 0.95", () => {
    const { state } = makeState();
    expect(state.sampler.topP).toBe(0.95);
    expect(DEFAULT_SAMPLER.topP).toBe(0.95);
  });
});

describe("reference editor", () => {
  let state: WorkbenchState;

  beforeEach(async () => {
    ({ state } = makeState());
    await state.connect();
    await state.startSession(["alice", "bob"]);
  });

  it("blocks the ninth row in the form", () => {
    for (let i = 0; i < MAX_REFERENCES; i++) {
      expect(state.addReferenceRow("alice")).toBe(true);
    }
    expect(state.draftFor("alice")).toHaveLength(8);
    expect(state.canAddReferenceRow("alice")).toBe(false);
    expect(state.addReferenceRow("alice")).toBe(false);
    expect(state.draftFor("alice")).toHaveLength(8);
    expect(state.banner).toMatch(/8/);
  });

  it("saves drafted tuples and reports the stored count", async () => {
    state.addReferenceRow("alice");
    state.draftFor("alice")[0].reply = "a reply written by alice";
    const count = await state.saveReferences("alice");
    expect(count).toBe(1);
    expect(state.references.alice).toHaveLength(1);
    expect(state.references.alice[0].parent).toBeNull();
  });

  it("server rejects an oversized list outright", async () => {
    const tuples = Array.from({ length: 9 }, (_, i) => ({
      parent: null,
      reply: `r${i}`,
      reply_id: `id${i}`,
      score: i,
    }));
    await expect(state.client.setReferences(state.sessionId!, "alice", tuples)).rejects.toThrow(
      ApiError,
    );
  });
});

describe("generation", () => {
  it("appends the sampled turn from the service response only", async () => {
    const { state, service } = makeState();
    await state.connect();
    await state.startSession(["alice", "bob"]);
    await state.composeTurn("alice", "hello bob how are you");
    state.target = "bob";
    state.sampler.seed = 7;
    const response = await state.steerGeneration();
    expect(service.sampleCalls).toBe(1);
    expect(state.transcript.at(-1)?.text).toBe(response.turn.text);
    expect(state.transcript.at(-1)?.origin).toBe("model");
    expect(state.layout).not.toBeNull();
  });

  it("allows only one in-flight generation per session", async () => {
    const { state } = makeState();
    await state.connect();
    await state.startSession(["alice"]);
    state.target = "alice";
    const first = state.steerGeneration();
    expect(state.pending).toBe(true);
    expect(state.canGenerate).toBe(false);
    await expect(state.steerGeneration()).rejects.toThrow(/in flight/);
    await first;
    expect(state.pending).toBe(false);
    expect(state.canGenerate).toBe(true);
  });

  it("only talks to documented endpoints end to end", async () => {
    const { state, client } = makeState();
    await state.connect();
    await state.startSession(["alice", "bob"]);
    await state.composeTurn("alice", "the seed turn text");
    state.addReferenceRow("bob");
    state.draftFor("bob")[0].reply = "bob past reply";
    await state.saveReferences("bob");
    state.target = "bob";
    await state.steerGeneration();
    await state.scoreTranscript();
    expect(client.requestLog.length).toBeGreaterThanOrEqual(6);
    for (const entry of client.requestLog) {
      expect(isDocumented(entry), `${entry.method} ${entry.path}`).toBe(true);
    }
  });
});
