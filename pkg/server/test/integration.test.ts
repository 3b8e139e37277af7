/**
 * End-to-end: the selection engine runs a 20-instance question-classification
 * subset against this server over the wire protocol with zero protocol
 * errors. Skipped automatically when the engine is not installed.
 */

import { execFile, spawnSync } from "node:child_process";
import { readFileSync, mkdtempSync } from "node:fs";
import type { Server } from "node:http";
import { tmpdir } from "node:os";
import { join, resolve } from "node:path";
import { promisify } from "node:util";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { createApp, DEFAULTS } from "../src/server.js";

function engineAvailable(): boolean {
  const probe = spawnSync("python3", ["-c", "import iclsel"], { stdio: "ignore" });
  return probe.status === 0;
}

const run = engineAvailable() ? describe : describe.skip;

run("primary engine against the shim", () => {
  let server: Server;
  let port: number;

  beforeAll(async () => {
    const app = createApp({ ...DEFAULTS, maxLen: 16384 });
    await new Promise<void>((resolveListen) => {
      server = app.listen(0, "127.0.0.1", () => resolveListen());
    });
    const addr = server.address();
    if (addr === null || typeof addr === "string") throw new Error("no port");
    port = addr.port;
  });

  afterAll(() => {
    server.close();
  });

  it("completes a 20-instance run with zero protocol errors", { timeout: 180_000 }, async () => {
    const descriptor = resolve(__dirname, "../../data/trec_demo/descriptor.json");
    const out = mkdtempSync(join(tmpdir(), "iclsel-integration-"));
    // async spawn: the engine talks back to this process's server, so the
    // event loop must stay free while the child runs
    await promisify(execFile)(
      "python3",
      [
        "-m", "iclsel.cli", "eval",
        "--dataset", descriptor,
        "--backend", `http:127.0.0.1:${port}`,
        "--strategy", "dva",
        "--k", "30",
        "--n", "8",
        "--lambda", "0.6",
        "--seed", "1",
        "--out", out,
      ],
      { timeout: 170_000 },
    );
    const report = JSON.parse(readFileSync(join(out, "report.json"), "utf-8"));
    expect(report.failures).toEqual([]);
    expect(report.per_instance.length).toBe(20);
    expect(report.config.strategy).toBe("dva");
    for (const instance of report.per_instance) {
      expect(["ABBR", "ENTY", "DESC", "HUM", "LOC", "NUM"]).toContain(instance.predicted);
    }
    const traces = readFileSync(join(out, "trace.jsonl"), "utf-8").trim().split("\n");
    expect(traces.length).toBe(20);
    const first = JSON.parse(traces[0]);
    expect(first.scored.length).toBe(29); // K-1 candidates scored per instance
  });
});
