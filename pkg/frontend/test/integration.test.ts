/**
 * Live round-trip against the real service: an annotator script completes
 * batches end to end, and every client-built BIO sequence must be accepted
 * by the server-side validator.
 */

import { ChildProcess, spawn } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { spansToBio } from "../src/bio.js";
import { AnnotationSession } from "../src/state.js";
import { randomSpanSet } from "./fuzz.js";

const TITLES = ["dune", "emma", "hamlet", "ivanhoe", "persuasion", "middlemarch"];
const ARTISTS = ["adele", "bowie", "prince", "sting", "madonna", "cher"];

function corpusLines(): { train: string[]; pool: string[] } {
  const row = (id: string, domain: string, intent: string, tokens: string[], tags: string[]) =>
    JSON.stringify({
      id,
      text: tokens.join(" "),
      tokens,
      domain,
      intent,
      bio_tags: tags,
      source: "live",
    });
  const train: string[] = [];
  for (let i = 0; i < 30; i++) {
    train.push(
      row(`tb${i}`, "books", "ReadBookIntent", ["read", TITLES[i % 6]], ["O", "B-Title"]),
      row(`tm${i}`, "music", "PlayMusicIntent", ["play", ARTISTS[i % 6]], ["O", "B-Artist"]),
    );
  }
  const pool: string[] = [];
  for (let i = 0; i < 90; i++) {
    pool.push(row(`pb${i}`, "books", "ReadBookIntent", ["read", "me", `book${i}`], ["O", "O", "B-Title"]));
    pool.push(row(`pm${i}`, "music", "PlayMusicIntent", ["play", `song${i}`], ["O", "B-Artist"]));
  }
  return { train, pool };
}

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const server = createServer();
    server.listen(0, "127.0.0.1", () => {
      const address = server.address();
      if (address && typeof address === "object") {
        const port = address.port;
        server.close(() => resolve(port));
      } else {
        reject(new Error("no port"));
      }
    });
  });
}

describe("UI against a live service", () => {
  let proc: ChildProcess;
  let base: string;
  let client: ApiClient;

  beforeAll(async () => {
    const dir = mkdtempSync(join(tmpdir(), "alpool-ui-"));
    const { train, pool } = corpusLines();
    writeFileSync(join(dir, "train.jsonl"), train.join("\n") + "\n");
    writeFileSync(join(dir, "pool.jsonl"), pool.join("\n") + "\n");

    const port = await freePort();
    base = `http://127.0.0.1:${port}`;
    proc = spawn(
      "python3",
      [
        "-m",
        "alpool.cli",
        "serve",
        "--train", join(dir, "train.jsonl"),
        "--pool", join(dir, "pool.jsonl"),
        "--journal-dir", join(dir, "journal"),
        "--port", String(port),
      ],
      { stdio: ["ignore", "pipe", "pipe"] },
    );
    const deadline = Date.now() + 120_000;
    for (;;) {
      try {
        const response = await fetch(`${base}/sessions`);
        if (response.ok) break;
      } catch {
        // not up yet
      }
      if (Date.now() > deadline) throw new Error("service did not start");
      await new Promise((r) => setTimeout(r, 300));
    }
    client = new ApiClient(base);
  }, 150_000);

  afterAll(() => {
    proc?.kill();
  });

  it(
    "completes batches with fuzzed spans the server validates identically",
    async () => {
      const created = await client.createSession({
        targets: ["books"],
        algorithm: "Majority-SA",
        iterations: 2,
        batch_size: 25,
        seed: 5,
      });
      expect(created.status).toBe("awaiting_annotation");

      const controller = new AnnotationSession(client, created.id, "fuzzer");
      await controller.refresh();
      expect(controller.queue.length).toBe(25);

      // deterministic LCG so failures are reproducible
      let state = 42;
      const rand = () => {
        state = (state * 48271) % 2147483647;
        return state / 2147483647;
      };

      let fuzzed = 0;
      let advanced = 0;
      while (fuzzed < 50) {
        const item = controller.current();
        expect(item).not.toBeNull();
        const spans = randomSpanSet(rand, item!.tokens.length);
        // client-side conversion; the server re-validates the result
        expect(() => spansToBio(spans, item!.tokens.length)).not.toThrow();
        const result = await controller.submit(item!, {
          domain: "books",
          intent: "ReadBookIntent",
          spans,
          flag: "ok",
        });
        expect(result.accepted).toBe(true);
        fuzzed += 1;
        if (result.advanced) {
          advanced += 1;
          if (!result.done) {
            // the next batch is rendered: queue refilled from the server
            expect(controller.queue.length).toBeGreaterThan(0);
            expect(controller.snapshot?.iteration).toBe(advanced);
          }
        }
      }
      expect(fuzzed).toBe(50);
      expect(advanced).toBeGreaterThanOrEqual(1);

      const metrics = await client.metrics(created.id);
      expect(metrics.empty).toBe(false);
      expect(metrics.iterations[0].annotated).toBe(25);
      expect(metrics.iterations[0].in_target_fraction).toBe(1);
    },
    240_000,
  );
});
