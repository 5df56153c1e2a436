// End-to-end loop against the real suggest service: build a small trie with
// the backend CLI, start `typeahead serve`, and drive the controller with
// real timers and real HTTP.

import { ChildProcess, execFileSync, spawn } from "node:child_process";
import { mkdtempSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { httpFetcher, suggestUrl } from "../src/api.js";
import type { SuggestFetcher, SuggestResponse } from "../src/api.js";
import { TypeaheadController } from "../src/controller.js";

const PORT = 8931;
const BASE = `http://127.0.0.1:${PORT}`;

let workDir: string;
let service: ChildProcess | undefined;

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

async function waitForHealth(): Promise<void> {
  const deadline = Date.now() + 30_000;
  while (Date.now() < deadline) {
    try {
      const res = await fetch(`${BASE}/health`);
      if (res.ok) return;
    } catch {
      // not up yet
    }
    await sleep(150);
  }
  throw new Error("service did not become healthy within 30s");
}

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), "typeahead-ui-"));
  const counts = [
    ["green tea cup", 40],
    ["green tea pot", 25],
    ["green tea set", 12],
    ["green grass", 9],
    ["grand piano", 18],
    ["granite slab", 7],
    ["cold brew jar", 30],
    ["cold brew can", 11],
  ]
    .map(([query, count]) => `${query}\t${count}\n`)
    .join("");
  writeFileSync(join(workDir, "counts.tsv"), counts);
  execFileSync("typeahead", [
    "build-trie",
    "--counts", join(workDir, "counts.tsv"),
    "--out", join(workDir, "trie.bin"),
  ]);
  service = spawn(
    "typeahead",
    ["serve", "--trie", join(workDir, "trie.bin"), "--port", String(PORT), "--strategy", "mpc"],
    { stdio: "ignore" }
  );
  await waitForHealth();
}, 60_000);

afterAll(() => {
  service?.kill();
  rmSync(workDir, { recursive: true, force: true });
});

describe("live typing loop", () => {
  it(
    "types a 10-character prefix with at most 10 requests and mirrors server order",
    async () => {
      let requests = 0;
      const base = httpFetcher(BASE);
      const counting: SuggestFetcher = (query, signal) => {
        requests += 1;
        return base(query, signal);
      };
      const controller = new TypeaheadController({
        fetcher: counting,
        strategy: "mpc",
        onRender: () => {},
      });

      const prefix = "green tea ";
      expect(prefix.length).toBe(10);
      for (let i = 1; i <= prefix.length; i++) {
        controller.setPrefix(prefix.slice(0, i));
        // the first two keystrokes land in one debounce window
        await sleep(i <= 2 ? 30 : 120);
      }
      const deadline = Date.now() + 5_000;
      while (Date.now() < deadline) {
        const state = controller.snapshot();
        if (!state.pending && state.response?.prefix === prefix) break;
        await sleep(50);
      }

      expect(requests).toBeLessThanOrEqual(10);
      const state = controller.snapshot();
      expect(state.error).toBeNull();
      expect(state.response?.prefix).toBe(prefix);

      const direct = (await (
        await fetch(suggestUrl(BASE, { prefix, k: 10, strategy: "mpc" }))
      ).json()) as SuggestResponse;
      expect(direct.suggestions.map((s) => s.text)).toEqual([
        "green tea cup",
        "green tea pot",
        "green tea set",
      ]);
      expect(state.response?.suggestions).toEqual(direct.suggestions);
    },
    30_000
  );

  it(
    "discards a stale response that arrives after a newer one",
    async () => {
      const base = httpFetcher(BASE);
      let held = 0;
      // Deliberately ignores the abort signal and sits on the "gr" answer,
      // so the only defense left is the staleness check.
      const holding: SuggestFetcher = async (query) => {
        const result = await base(query);
        if (query.prefix === "gr") {
          held += 1;
          await sleep(500);
        }
        return result;
      };
      const controller = new TypeaheadController({
        fetcher: holding,
        strategy: "mpc",
        onRender: () => {},
      });

      controller.setPrefix("gr");
      await sleep(150); // "gr" dispatched and now held
      controller.setPrefix("green");
      await sleep(300); // "green" answered while "gr" is still in the air
      expect(controller.snapshot().response?.prefix).toBe("green");

      await sleep(600); // held "gr" answer finally lands
      const state = controller.snapshot();
      expect(held).toBe(1);
      expect(state.response?.prefix).toBe("green");
      expect(state.discarded).toBeGreaterThanOrEqual(1);
    },
    30_000
  );

  it("surfaces the service's error message for a bad request", async () => {
    const fetcher = httpFetcher(BASE);
    await expect(fetcher({ prefix: "x", strategy: "bogus" })).rejects.toThrow(
      /unknown strategy/
    );
  });
});
