/** DOM rendering. Pure functions from state to elements; all behavior is
 * delegated back to the state store through the passed handlers. */

import { buildStripCells } from "./layout";
import { MAX_REFERENCES, WorkbenchState } from "./state";

export interface Handlers {
  onRetry(): void;
  onStart(speakers: string[]): void;
  onCompose(author: string, text: string): void;
  onGenerate(): void;
  onSaveReferences(author: string): void;
  onScore(): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function render(state: WorkbenchState, root: HTMLElement, handlers: Handlers): void {
  root.textContent = "";
  if (state.banner) {
    const banner = el("div", "banner", state.banner);
    if (state.status === "offline") {
      const retry = el("button", "retry", "retry");
      retry.onclick = handlers.onRetry;
      banner.appendChild(retry);
    }
    root.appendChild(banner);
  }
  root.appendChild(renderModelPicker(state, handlers));
  if (state.sessionId) {
    root.appendChild(renderTranscript(state));
    root.appendChild(renderComposer(state, handlers));
    root.appendChild(renderSamplerControls(state, handlers));
    root.appendChild(renderReferenceEditor(state, handlers));
    root.appendChild(renderLayoutStrip(state));
    root.appendChild(renderScorePanel(state, handlers));
  }
}

function renderModelPicker(state: WorkbenchState, handlers: Handlers): HTMLElement {
  const panel = el("section", "model-picker");
  panel.appendChild(el("h2", undefined, "Model"));
  const select = el("select");
  select.id = "model-select";
  for (const model of state.models) {
    const option = el("option", undefined, `${model.model_id} (${model.variant})`);
    option.value = model.model_id;
    select.appendChild(option);
  }
  select.value = state.selectedModel;
  select.onchange = () => {
    state.selectedModel = select.value;
  };
  panel.appendChild(select);

  const start = el("button", "start", "start session");
  start.id = "start-session";
  start.disabled = !state.canStart;
  start.onclick = () => {
    const field = panel.querySelector<HTMLInputElement>("#speakers-input");
    const speakers = (field?.value ?? "")
      .split(",")
      .map((s) => s.trim())
      .filter(Boolean);
    if (speakers.length) handlers.onStart(speakers);
  };
  const speakersInput = el("input");
  speakersInput.id = "speakers-input";
  speakersInput.placeholder = "speakers, comma separated";
  speakersInput.value = state.speakers.join(", ");
  panel.appendChild(speakersInput);
  panel.appendChild(start);
  return panel;
}

function renderTranscript(state: WorkbenchState): HTMLElement {
  const panel = el("section", "transcript");
  panel.id = "transcript";
  panel.appendChild(el("h2", undefined, "Transcript"));
  for (const turn of state.transcript) {
    const row = el("div", `turn origin-${turn.origin}`);
    row.appendChild(el("span", "author-badge", turn.author));
    row.appendChild(el("span", "origin-badge", turn.origin));
    row.appendChild(el("span", "turn-text", turn.text));
    panel.appendChild(row);
  }
  return panel;
}

function renderComposer(state: WorkbenchState, handlers: Handlers): HTMLElement {
  const panel = el("section", "composer");
  const author = el("select");
  author.id = "compose-author";
  for (const speaker of state.speakers) {
    const option = el("option", undefined, speaker);
    option.value = speaker;
    author.appendChild(option);
  }
  const text = el("input");
  text.id = "compose-text";
  text.placeholder = "write a turn…";
  const send = el("button", undefined, "add turn");
  send.id = "compose-send";
  send.onclick = () => {
    if (text.value.trim()) handlers.onCompose(author.value, text.value);
  };
  panel.append(author, text, send);
  return panel;
}

function renderSamplerControls(state: WorkbenchState, handlers: Handlers): HTMLElement {
  const panel = el("section", "sampler");
  panel.appendChild(el("h2", undefined, "Next turn"));

  const target = el("select");
  target.id = "target-select";
  for (const speaker of state.speakers) {
    const option = el("option", undefined, speaker);
    option.value = speaker;
    target.appendChild(option);
  }
  target.value = state.target;
  target.onchange = () => {
    state.target = target.value;
  };
  panel.appendChild(labelled("target speaker", target));

  const topP = numberInput("top-p", state.sampler.topP, 0.01, (v) => (state.sampler.topP = v));
  const temperature = numberInput(
    "temperature", state.sampler.temperature, 0.05, (v) => (state.sampler.temperature = v),
  );
  const maxTokens = numberInput(
    "max-tokens", state.sampler.maxNewTokens, 1, (v) => (state.sampler.maxNewTokens = Math.round(v)),
  );
  const seed = numberInput("seed", state.sampler.seed, 1, (v) => (state.sampler.seed = Math.round(v)));
  panel.appendChild(labelled("top_p", topP));
  panel.appendChild(labelled("temperature", temperature));
  panel.appendChild(labelled("max tokens", maxTokens));
  panel.appendChild(labelled("seed", seed));

  const generate = el("button", "generate", state.pending ? "generating…" : "generate");
  generate.id = "generate";
  generate.disabled = !state.canGenerate;
  generate.onclick = handlers.onGenerate;
  panel.appendChild(generate);
  return panel;
}

function numberInput(id: string, value: number, step: number, commit: (v: number) => void): HTMLInputElement {
  const input = el("input");
  input.type = "number";
  input.id = id;
  input.step = String(step);
  input.value = String(value);
  input.onchange = () => {
    const parsed = Number(input.value);
    if (!Number.isNaN(parsed)) commit(parsed);
  };
  return input;
}

function labelled(text: string, control: HTMLElement): HTMLElement {
  const wrap = el("label", "control");
  wrap.appendChild(el("span", "control-name", text));
  wrap.appendChild(control);
  return wrap;
}

function renderReferenceEditor(state: WorkbenchState, handlers: Handlers): HTMLElement {
  const panel = el("section", "references");
  panel.id = "reference-editor";
  panel.appendChild(el("h2", undefined, `References (max ${MAX_REFERENCES} per speaker)`));
  for (const speaker of state.speakers) {
    const block = el("div", "speaker-refs");
    block.dataset.speaker = speaker;
    block.appendChild(el("h3", undefined, speaker));
    const rows = state.draftFor(speaker);
    rows.forEach((row, i) => {
      const rowEl = el("div", "ref-row");
      const parent = el("input", "ref-parent");
      parent.placeholder = "parent (optional)";
      parent.value = row.parent;
      parent.onchange = () => (row.parent = parent.value);
      const reply = el("input", "ref-reply");
      reply.placeholder = "reply by this speaker";
      reply.value = row.reply;
      reply.onchange = () => (row.reply = reply.value);
      rowEl.dataset.index = String(i);
      rowEl.append(parent, reply);
      block.appendChild(rowEl);
    });
    const add = el("button", "add-ref", "add tuple");
    add.disabled = !state.canAddReferenceRow(speaker);
    add.onclick = () => state.addReferenceRow(speaker);
    const save = el("button", "save-refs", "save");
    save.onclick = () => handlers.onSaveReferences(speaker);
    block.append(add, save);
    panel.appendChild(block);
  }
  return panel;
}

function renderLayoutStrip(state: WorkbenchState): HTMLElement {
  const panel = el("section", "layout");
  panel.id = "layout-strip";
  panel.appendChild(el("h2", undefined, "Encoded layout"));
  if (!state.layout) {
    panel.appendChild(el("p", "empty", "generate a turn to see the packed sample"));
    return panel;
  }
  const strip = el("div", "strip");
  for (const cell of buildStripCells(state.layout)) {
    const cellEl = el("span", `cell type-${cell.short.toLowerCase()}`);
    cellEl.title = `pos ${cell.position} token ${cell.tokenId} (${cell.short})`;
    cellEl.style.backgroundColor = cell.color;
    if (cell.masked) cellEl.classList.add("masked");
    if (cell.generated) cellEl.classList.add("generated");
    strip.appendChild(cellEl);
  }
  panel.appendChild(strip);
  panel.appendChild(
    el(
      "p",
      "layout-meta",
      `reference ${state.layout.ref_len} tokens, conversation ${state.layout.conv_len} tokens`,
    ),
  );
  return panel;
}

function renderScorePanel(state: WorkbenchState, handlers: Handlers): HTMLElement {
  const panel = el("section", "score");
  panel.id = "score-panel";
  panel.appendChild(el("h2", undefined, "Scoring"));
  const button = el("button", undefined, "score transcript");
  button.id = "score-button";
  button.disabled = state.transcript.length === 0;
  button.onclick = handlers.onScore;
  panel.appendChild(button);
  if (state.lastScore) {
    const { token_ppl, scored_tokens } = state.lastScore;
    panel.appendChild(
      el("p", "score-line", `token perplexity ${token_ppl.toFixed(3)} over ${scored_tokens} tokens`),
    );
    for (const s of state.lastScore.per_speaker) {
      panel.appendChild(
        el("p", "speaker-line", `${s.speaker}: ${s.token_ppl.toFixed(3)} (${s.tokens} tokens)`),
      );
    }
  }
  return panel;
}
