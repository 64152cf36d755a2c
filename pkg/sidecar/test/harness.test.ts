import { spawn, spawnSync } from "node:child_process";
import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import type { Server } from "node:http";
import { tmpdir } from "node:os";
import { join, resolve } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { buildApp } from "../src/app.js";

// sidecar/test/ -> repo root
const repoRoot = resolve(fileURLToPath(new URL(".", import.meta.url)), "..", "..");

const havePython =
  spawnSync("python3", ["-c", "import twon"], { cwd: repoRoot }).status === 0;

let server: Server;
let port: number;

beforeAll(async () => {
  const app = buildApp({ d: 32, version: "e2e" });
  await new Promise<void>((resolvePromise) => {
    server = app.listen(0, "127.0.0.1", resolvePromise);
  });
  const address = server.address();
  if (typeof address !== "object" || !address) throw new Error("no address");
  port = address.port;
});

afterAll(() => {
  server.close();
});

// spawnSync would block the event loop and starve the in-process server,
// so the Python harness has to run detached from it.
function runPython(args: string[], env: NodeJS.ProcessEnv) {
  return new Promise<{ status: number | null; stderr: string }>((resolvePromise, reject) => {
    const child = spawn("python3", args, { cwd: repoRoot, env });
    let stderr = "";
    child.stderr.on("data", (chunk) => {
      stderr += chunk;
    });
    child.on("error", reject);
    child.on("close", (status) => resolvePromise({ status, stderr }));
  });
}

describe("harness round trip", () => {
  it.skipIf(!havePython)(
    "evaluate completes against the live sidecar",
    async () => {
      const work = mkdtempSync(join(tmpdir(), "sidecar-e2e-"));
      const outDir = join(work, "out");
      const config = join(work, "evaluate.toml");
      writeFileSync(
        config,
        [
          "[run]",
          "seed = 7",
          `output_dir = ${JSON.stringify(outDir)}`,
          'task = "reply"',
          'condition = "sidecar-e2e"',
          "",
          "[data]",
          `test_path = ${JSON.stringify(join(repoRoot, "sample_data", "corpus.jsonl"))}`,
          "",
          "[provider]",
          'kind = "remote"',
          "",
          "[metrics]",
          "n = 6",
          "k = 2",
          'embedder = "remote"',
          'labels = "remote"',
          'categories = ["sentiment"]',
          "",
        ].join("\n"),
      );
      const run = await runPython(["-m", "twon", "evaluate", "--config", config], {
        ...process.env,
        TWON_SIDECAR_URL: `http://127.0.0.1:${port}`,
      });
      expect(run.status, run.stderr).toBe(0);
      const report = JSON.parse(
        readFileSync(join(outDir, "report_reply_en_sidecar-e2e.json"), "utf-8"),
      );
      expect(report.n_samples).toBe(6);
      expect(report.metrics.bleu).toBeDefined();
      expect(report.metrics.sentiment).toBeDefined();
    },
    120_000,
  );
});
