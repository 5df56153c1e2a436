// DOM-free typing loop: debounce keystrokes, keep at most one request in
// flight, and never let an out-of-date response overwrite a newer list.

import type { SuggestFetcher, SuggestResponse } from "./api.js";

export interface UiState {
  prefix: string;
  user: string;
  strategy: string;
  /** ISO-8601 override for the request timestamp; "" means server time. */
  simulatedTime: string;
  pending: boolean;
  /** Message for the inline banner; null when the last request succeeded. */
  error: string | null;
  /** Last response that was still current when it arrived. */
  response: SuggestResponse | null;
  /** Stale or superseded responses dropped so far (demo diagnostics). */
  discarded: number;
}

export interface ControllerOptions {
  fetcher: SuggestFetcher;
  onRender: (state: UiState) => void;
  debounceMs?: number;
  k?: number;
  strategy?: string;
}

const DEFAULT_DEBOUNCE_MS = 80;

export class TypeaheadController {
  private readonly fetcher: SuggestFetcher;
  private readonly onRender: (state: UiState) => void;
  private readonly debounceMs: number;
  private readonly k: number;

  private state: UiState;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private inFlight: AbortController | null = null;
  // Monotone ticket; a response only lands if it still holds the newest one.
  private requestSeq = 0;

  constructor(options: ControllerOptions) {
    this.fetcher = options.fetcher;
    this.onRender = options.onRender;
    this.debounceMs = options.debounceMs ?? DEFAULT_DEBOUNCE_MS;
    this.k = options.k ?? 10;
    this.state = {
      prefix: "",
      user: "",
      strategy: options.strategy ?? "routed",
      simulatedTime: "",
      pending: false,
      error: null,
      response: null,
      discarded: 0,
    };
  }

  snapshot(): UiState {
    return { ...this.state };
  }

  /** Keystroke entry point: re-arms the debounce timer for the new prefix. */
  setPrefix(prefix: string): void {
    this.state.prefix = prefix;
    this.clearTimer();
    if (prefix.trim() === "") {
      this.abortInFlight();
      this.requestSeq += 1; // anything still in the air is now stale
      this.state.pending = false;
      this.state.response = null;
      this.state.error = null;
      this.render();
      return;
    }
    this.timer = setTimeout(() => {
      this.timer = null;
      this.dispatch();
    }, this.debounceMs);
    this.render();
  }

  /** Clicking a suggestion fills the box and refreshes for the new prefix. */
  choose(text: string): void {
    this.setPrefix(text);
  }

  setUser(user: string): void {
    this.state.user = user;
    this.refresh();
  }

  setStrategy(strategy: string): void {
    this.state.strategy = strategy;
    this.refresh();
  }

  setSimulatedTime(iso: string): void {
    this.state.simulatedTime = iso;
    this.refresh();
  }

  /** Context changed: reissue immediately for the current prefix. */
  private refresh(): void {
    this.clearTimer();
    if (this.state.prefix.trim() === "") {
      this.render();
      return;
    }
    this.dispatch();
  }

  private dispatch(): void {
    this.abortInFlight();
    const seq = ++this.requestSeq;
    const controller = new AbortController();
    this.inFlight = controller;
    this.state.pending = true;
    this.render();

    this.fetcher(
      {
        prefix: this.state.prefix,
        k: this.k,
        strategy: this.state.strategy,
        user: this.state.user || undefined,
        t: this.state.simulatedTime || undefined,
      },
      controller.signal
    ).then(
      (response) => this.settle(seq, response, null),
      (reason) => {
        if (reason instanceof DOMException && reason.name === "AbortError") {
          return; // superseded on purpose; the newer request renders
        }
        this.settle(seq, null, reason instanceof Error ? reason.message : String(reason));
      }
    );
  }

  private settle(seq: number, response: SuggestResponse | null, error: string | null): void {
    if (seq !== this.requestSeq) {
      // A newer request was issued while this one was in the air. Keep
      // whatever is on screen; a late answer must never win.
      this.state.discarded += 1;
      return;
    }
    this.inFlight = null;
    this.state.pending = false;
    if (response !== null) {
      this.state.response = response;
      this.state.error = null;
    } else {
      // Leave the previous list visible behind the banner.
      this.state.error = error ?? "request failed";
    }
    this.render();
  }

  private clearTimer(): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
  }

  private abortInFlight(): void {
    if (this.inFlight !== null) {
      this.inFlight.abort();
      this.inFlight = null;
    }
  }

  private render(): void {
    this.onRender(this.snapshot());
  }
}
