// DOM bindings for the demo page. All behavior lives in the controller;
// this file only moves values between elements and UiState.

import { httpFetcher } from "./api.js";
import { TypeaheadController, UiState } from "./controller.js";

interface Elements {
  input: HTMLInputElement;
  list: HTMLUListElement;
  banner: HTMLElement;
  status: HTMLElement;
  strategy: HTMLSelectElement;
  user: HTMLSelectElement;
  time: HTMLInputElement;
}

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

export function mount(): TypeaheadController {
  const els: Elements = {
    input: byId<HTMLInputElement>("query"),
    list: byId<HTMLUListElement>("suggestions"),
    banner: byId<HTMLElement>("banner"),
    status: byId<HTMLElement>("status"),
    strategy: byId<HTMLSelectElement>("strategy"),
    user: byId<HTMLSelectElement>("user"),
    time: byId<HTMLInputElement>("time"),
  };

  const controller = new TypeaheadController({
    fetcher: httpFetcher(""),
    onRender: (state) => render(els, state, controller),
  });

  els.input.addEventListener("input", () => controller.setPrefix(els.input.value));
  els.strategy.addEventListener("change", () => controller.setStrategy(els.strategy.value));
  els.user.addEventListener("change", () => controller.setUser(els.user.value));
  els.time.addEventListener("change", () => {
    const value = els.time.value;
    controller.setSimulatedTime(value ? new Date(value).toISOString() : "");
  });
  return controller;
}

function render(els: Elements, state: UiState, controller: TypeaheadController): void {
  if (els.input.value !== state.prefix) {
    els.input.value = state.prefix;
  }

  els.banner.textContent = state.error ?? "";
  els.banner.hidden = state.error === null;

  // The list mirrors the server response order one-to-one.
  els.list.replaceChildren();
  for (const suggestion of state.response?.suggestions ?? []) {
    const item = document.createElement("li");
    const text = document.createElement("span");
    text.textContent = suggestion.text;
    const score = document.createElement("span");
    score.className = "score";
    score.textContent = suggestion.score.toFixed(3);
    item.append(text, score);
    item.addEventListener("click", () => controller.choose(suggestion.text));
    els.list.append(item);
  }

  if (state.pending) {
    els.status.textContent = "…";
  } else if (state.response) {
    els.status.textContent =
      `${state.response.strategy} · ${state.response.latency_ms.toFixed(1)} ms` +
      (state.discarded ? ` · ${state.discarded} stale dropped` : "");
  } else {
    els.status.textContent = "";
  }
}
