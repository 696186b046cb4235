/** Drives the real UI against a real, freshly built service instance:
 *  keyboard-label a full 25-crop batch, submit, watch the retrain, verify the
 *  next batch and the curve point against the metrics endpoint, then prove a
 *  rejected row is highlighted alone. Requires python3 + the installed CLI.
 */
import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { dirname, join, resolve } from "node:path";
import process from "node:process";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { App } from "../src/app.js";
import type { KeyValueStore } from "../src/keymap.js";

const REPO_ROOT = resolve(dirname(fileURLToPath(import.meta.url)), "..", "..");
const PORT = 18000 + (process.pid % 2000);
const BASE = `http://127.0.0.1:${PORT}/api/v1`;

let workDir = "";
let server: ChildProcess | null = null;
let serverLog = "";

class MemoryStore implements KeyValueStore {
  data = new Map<string, string>();
  getItem(key: string): string | null {
    return this.data.get(key) ?? null;
  }
  setItem(key: string, value: string): void {
    this.data.set(key, value);
  }
}

function press(key: string, target: HTMLElement = document.body): void {
  target.dispatchEvent(new KeyboardEvent("keydown", { key, bubbles: true, cancelable: true }));
}

async function until(cond: () => boolean, ms: number, what: string): Promise<void> {
  const deadline = Date.now() + ms;
  while (!cond()) {
    if (Date.now() > deadline) {
      throw new Error(`timed out waiting for ${what}\nserver output:\n${serverLog}`);
    }
    await new Promise((resolve_) => setTimeout(resolve_, 20));
  }
}

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), "camloop-ui-"));
  const demo = join(workDir, "demo");
  // Small but real project: 15 classes, a few hundred crops, 25-crop batches.
  const build = spawnSync(
    "python3",
    [
      join(REPO_ROOT, "scripts", "make_demo_project.py"),
      "--out", demo,
      "--seed", "11",
      "--divisor", "40",
      "--dim", "16",
      "--epochs", "8",
    ],
    { encoding: "utf-8" },
  );
  if (build.status !== 0) {
    throw new Error(`demo project build failed:\n${build.stdout}\n${build.stderr}`);
  }

  const child = spawn("camloop", ["serve", "--project", demo, "--port", String(PORT)], {
    stdio: ["ignore", "pipe", "pipe"],
  });
  server = child;
  child.stdout?.on("data", (chunk: Buffer) => {
    serverLog += chunk.toString();
  });
  child.stderr?.on("data", (chunk: Buffer) => {
    serverLog += chunk.toString();
  });
  child.on("error", (error) => {
    serverLog += `spawn error: ${error.message}\n`;
  });

  const deadline = Date.now() + 30_000;
  for (;;) {
    if (child.exitCode != null) {
      throw new Error(`service exited early (${child.exitCode}):\n${serverLog}`);
    }
    try {
      const response = await fetch(`${BASE}/project`);
      if (response.ok) break;
    } catch {
      // not listening yet
    }
    if (Date.now() > deadline) {
      throw new Error(`service never came up on port ${PORT}:\n${serverLog}`);
    }
    await new Promise((resolve_) => setTimeout(resolve_, 200));
  }
});

afterAll(async () => {
  if (server && server.exitCode == null) {
    server.kill("SIGTERM");
    await new Promise<void>((resolve_) => {
      const force = setTimeout(() => {
        server?.kill("SIGKILL");
        resolve_();
      }, 5000);
      server?.once("exit", () => {
        clearTimeout(force);
        resolve_();
      });
    });
  }
  if (workDir) rmSync(workDir, { recursive: true, force: true });
});

describe("live labeling loop", () => {
  it("labels a full batch by keyboard, retrains, advances a round, and charts the exact metrics", async () => {
    const root = document.createElement("div");
    document.body.appendChild(root);
    const app = new App(root, {
      base: BASE,
      storage: new MemoryStore(),
      pollIntervalMs: 150,
    });
    try {
      await app.start();
      expect(app.project).not.toBeNull();
      expect(app.batch?.batch_size).toBe(25);
      expect(app.queue.queue.length).toBe(25);
      expect(root.querySelector(".progress-count")?.textContent).toBe("0/25");
      const classNames = app.project?.class_names ?? [];
      expect(classNames.length).toBeGreaterThan(9); // digits AND letters in play
      const firstBatch = new Set(app.queue.queue.map((item) => item.crop_id));

      // Keyboard-label the entire batch, cycling through the species keys.
      for (let i = 0; app.queue.focused !== null; i += 1) {
        const species = classNames[i % classNames.length] ?? "";
        const key = app.keymap.get(species);
        expect(key, `key for ${species}`).toBeDefined();
        press(key ?? "");
      }
      expect(app.queue.stagedCount).toBe(25);
      expect(root.querySelector(".progress-count")?.textContent).toBe("25/25");

      press("Enter");
      // The submit that completes the batch flips the service to training.
      await until(
        () => app.batch?.status.state === "training" || app.queue.roundNumber === 1,
        20_000,
        "the service to enter training",
      );
      expect(app.batch?.status.state === "training" || app.queue.roundNumber === 1).toBe(true);

      // The next round's batch appears once the retrain finishes.
      await until(
        () => app.queue.roundNumber === 1 && app.queue.queue.length === 25,
        60_000,
        "the next round's batch",
      );
      const secondBatch = app.queue.queue.map((item) => item.crop_id);
      expect(secondBatch.some((id) => firstBatch.has(id))).toBe(false);
      expect(root.querySelector(".progress-count")?.textContent).toBe("0/25");

      // The curve gained exactly one point whose values match GET /metrics.
      await until(() => app.curvePoints.length === 1, 20_000, "the curve point");
      const metricsResponse = await fetch(`${BASE}/metrics`);
      expect(metricsResponse.ok).toBe(true);
      const metrics = (await metricsResponse.json()) as {
        labels_used: number;
        curve: Array<Record<string, number>>;
      };
      expect(metrics.curve.length).toBe(1);
      expect(metrics.labels_used).toBe(25);
      for (const metric of ["accuracy", "macro_precision", "macro_recall"] as const) {
        const dots = root.querySelectorAll(`circle[data-metric="${metric}"]`);
        expect(dots.length).toBe(1);
        expect(dots[0]?.getAttribute("data-labels")).toBe(String(metrics.curve[0]?.labels_used));
        expect(dots[0]?.getAttribute("data-value")).toBe(String(metrics.curve[0]?.[metric]));
      }

      // The crops the UI shows are the service's real PNG bytes.
      const image = root.querySelector<HTMLImageElement>(".crop-image");
      expect(image).not.toBeNull();
      const imageResponse = await fetch(image?.src ?? "");
      expect(imageResponse.ok).toBe(true);
      expect(imageResponse.headers.get("content-type")).toContain("image/png");

      // A rejected species highlights only the offending crop; the two valid
      // staged labels survive untouched, and the server applied nothing.
      const valid0 = app.keymap.get(classNames[0] ?? "") ?? "";
      const valid1 = app.keymap.get(classNames[1] ?? "") ?? "";
      const keptA = app.queue.focused?.crop_id ?? "";
      press(valid0);
      const keptB = app.queue.focused?.crop_id ?? "";
      press(valid1);
      const offender = app.queue.focused?.crop_id ?? "";
      app.queue.stage("definitely-not-a-species"); // a stale keymap could do this
      press("Enter");
      await until(
        () => root.querySelectorAll("[data-crop-id].invalid").length > 0,
        20_000,
        "the rejection highlight",
      );
      const invalid = root.querySelectorAll("[data-crop-id].invalid");
      expect(invalid.length).toBe(1);
      expect(invalid[0]?.getAttribute("data-crop-id")).toBe(offender);
      expect(root.querySelector(".rejection")?.textContent).toContain("unknown species");
      expect(app.queue.stagedCount).toBe(2);
      expect(app.queue.stagedSpecies(keptA)).toBe(classNames[0]);
      expect(app.queue.stagedSpecies(keptB)).toBe(classNames[1]);
      const projectNow = (await (await fetch(`${BASE}/project`)).json()) as {
        labels_used: number;
        rounds_completed: number;
      };
      expect(projectNow.labels_used).toBe(25); // the rejected submission applied nothing
      expect(projectNow.rounds_completed).toBe(1);
    } finally {
      app.stop();
      root.remove();
    }
  });
});
