import { beforeEach, describe, expect, it } from "vitest";

import { ServiceClient } from "../src/api";
import { WorkbenchState } from "../src/state";
import { Handlers, render } from "../src/ui";
import { FakeService, makeLayout } from "./fakes";

const noopHandlers: Handlers = {
  onRetry: () => undefined,
  onStart: () => undefined,
  onCompose: () => undefined,
  onGenerate: () => undefined,
  onSaveReferences: () => undefined,
  onScore: () => undefined,
};

describe("rendering", () => {
  let state: WorkbenchState;
  let root: HTMLElement;

  beforeEach(async () => {
    const service = new FakeService();
    state = new WorkbenchState(new ServiceClient("http://fake.test", service.fetch));
    root = document.createElement("div");
    await state.connect();
    await state.startSession(["alice", "bob"]);
  });

  it("renders transcript turns with author and origin badges", async () => {
    await state.composeTurn("alice", "written by a human");
    state.target = "bob";
    await state.steerGeneration();
    render(state, root, noopHandlers);
    const rows = root.querySelectorAll("#transcript .turn");
    expect(rows).toHaveLength(2);
    expect(rows[0].querySelector(".author-badge")?.textContent).toBe("alice");
    expect(rows[0].querySelector(".origin-badge")?.textContent).toBe("human");
    expect(rows[1].querySelector(".origin-badge")?.textContent).toBe("model");
  });

  it("disables generate while a request is in flight", () => {
    state.pending = true;
    render(state, root, noopHandlers);
    const button = root.querySelector<HTMLButtonElement>("#generate");
    expect(button?.disabled).toBe(true);
    expect(button?.textContent).toMatch(/generating/);
  });

  it("strip cell count equals the service-reported lengths", () => {
    state.layout = makeLayout(6, 10);
    render(state, root, noopHandlers);
    const cells = root.querySelectorAll("#layout-strip .strip .cell");
    expect(cells).toHaveLength(16);
  });

  it("blocks adding a ninth reference row in the form", () => {
    for (let i = 0; i < 8; i++) state.addReferenceRow("alice");
    render(state, root, noopHandlers);
    const block = root.querySelector('[data-speaker="alice"]');
    const add = block?.querySelector<HTMLButtonElement>(".add-ref");
    expect(block?.querySelectorAll(".ref-row")).toHaveLength(8);
    expect(add?.disabled).toBe(true);
  });

  it("top_p control shows the 0.95 default", () => {
    render(state, root, noopHandlers);
    const topP = root.querySelector<HTMLInputElement>("#top-p");
    expect(topP?.value).toBe("0.95");
  });

  it("score panel renders per-speaker perplexities", async () => {
    await state.composeTurn("alice", "something to score");
    await state.scoreTranscript();
    render(state, root, noopHandlers);
    expect(root.querySelector("#score-panel .score-line")?.textContent).toMatch(
      /token perplexity 12.500/,
    );
  });
});
