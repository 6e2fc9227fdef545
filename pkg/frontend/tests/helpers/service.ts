// Spins up the real Python service on the acceptance-scale model
// (6 concepts with one coupled pair, 4 classes, 2000 training examples,
// 30 epochs, seed 0). Training is deterministic, so every run serves the
// identical model.

import { spawn, spawnSync, ChildProcess } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

const GENERATOR_SPEC = `n_concepts=6
n_classes=4
feature_dim=16
n_examples=2000
flip_prob=0.05
feature_noise=0.1
feature_seed=1
couplings=4:5
prototypes=110010,011001,101100,000111
`;

export const COUPLED_SOURCE = 4;
export const COUPLED_TARGET = 5;

export interface LiveService {
  url: string;
  stop: () => void;
}

function runCli(args: string[]): void {
  const r = spawnSync("python3", ["-m", "ecbm.cli", ...args], {
    encoding: "utf8",
    timeout: 240_000,
  });
  if (r.status !== 0) {
    throw new Error(
      `ecbm ${args[0]} failed (${r.status}): ${r.stderr || r.stdout}`);
  }
}

async function waitForHealth(url: string, child: ChildProcess): Promise<void> {
  const deadline = Date.now() + 60_000;
  let lastErr: unknown = null;
  while (Date.now() < deadline) {
    if (child.exitCode !== null) {
      throw new Error(`service exited early with code ${child.exitCode}`);
    }
    try {
      const resp = await fetch(`${url}/health`);
      if (resp.ok) return;
    } catch (err) {
      lastErr = err;
    }
    await new Promise((resolve) => setTimeout(resolve, 250));
  }
  throw new Error(`service never became healthy: ${lastErr}`);
}

export async function startLiveService(): Promise<LiveService> {
  const dir = mkdtempSync(join(tmpdir(), "ecbm-ui-e2e-"));
  const spec = join(dir, "gen.cfg");
  const train = join(dir, "train.txt");
  const test = join(dir, "test.txt");
  const ckpt = join(dir, "model.ckpt");
  writeFileSync(spec, GENERATOR_SPEC);
  runCli(["generate", "--spec", spec, "--seed", "0", "--out", train]);
  runCli(["generate", "--spec", spec, "--seed", "1", "--out", test]);
  runCli(["train", "--data", train, "--out", ckpt,
          "--epochs", "30", "--seed", "0"]);

  const port = 8600 + Math.floor(Math.random() * 800);
  const url = `http://127.0.0.1:${port}`;
  const child = spawn("python3", [
    "-m", "ecbm.cli", "serve", "--ckpt", ckpt, "--data", test,
    "--port", String(port), "--host", "127.0.0.1",
  ], { stdio: ["ignore", "pipe", "pipe"] });
  child.stderr?.on("data", () => {});
  await waitForHealth(url, child);
  return {
    url,
    stop: () => {
      child.kill("SIGTERM");
    },
  };
}
