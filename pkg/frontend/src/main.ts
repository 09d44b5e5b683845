import { ServiceClient } from "./api";
import { WorkbenchState } from "./state";
import { Handlers, render } from "./ui";

function serviceBase(): string {
  const override = new URLSearchParams(window.location.search).get("service");
  return override ?? window.location.origin;
}

export function boot(root: HTMLElement): WorkbenchState {
  const state = new WorkbenchState(new ServiceClient(serviceBase()));

  const redraw = () => render(state, root, handlers);
  const guarded = (work: () => Promise<unknown>) => {
    work().catch(() => undefined).finally(redraw);
  };

  const handlers: Handlers = {
    onRetry: () => guarded(() => state.connect()),
    onStart: (speakers) => guarded(() => state.startSession(speakers)),
    onCompose: (author, text) => guarded(() => state.composeTurn(author, text)),
    onGenerate: () => {
      redraw(); // show the disabled button while in flight
      guarded(() => state.steerGeneration());
    },
    onSaveReferences: (author) => guarded(() => state.saveReferences(author)),
    onScore: () => guarded(() => state.scoreTranscript()),
  };

  guarded(() => state.connect());
  return state;
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  boot(document.getElementById("app")!);
}
