import { describe, expect, it, vi } from "vitest";

import { LastWinsRunner } from "../src/debounce.js";

describe("debounced last-wins runner", () => {
  it("collapses rapid submissions into the most recent task", async () => {
    vi.useFakeTimers();
    const results: number[] = [];
    const runner = new LastWinsRunner<number>(
      (v) => results.push(v), () => {}, 100);
    let executed = 0;
    for (let i = 1; i <= 5; i += 1) {
      runner.submit(async () => {
        executed += 1;
        return i;
      });
      vi.advanceTimersByTime(40); // below the quiet period until the last
    }
    await vi.advanceTimersByTimeAsync(200);
    vi.useRealTimers();
    expect(executed).toBe(1);
    expect(results).toEqual([5]);
  });

  it("a submission during flight supersedes the in-flight result", async () => {
    vi.useFakeTimers();
    const results: number[] = [];
    const runner = new LastWinsRunner<number>(
      (v) => results.push(v), () => {}, 10);
    let release!: () => void;
    const gate = new Promise<void>((resolve) => { release = resolve; });
    runner.submit(async () => {
      await gate;
      return 1;
    });
    await vi.advanceTimersByTimeAsync(20); // first task now in flight
    runner.submit(async () => 2);
    release();
    await vi.advanceTimersByTimeAsync(50);
    vi.useRealTimers();
    expect(results).toEqual([2]); // stale result dropped, last state wins
  });

  it("errors from superseded tasks are swallowed, fresh ones reported", async () => {
    vi.useFakeTimers();
    const errors: unknown[] = [];
    const runner = new LastWinsRunner<number>(
      () => {}, (e) => errors.push(e), 10);
    runner.submit(async () => {
      throw new Error("boom");
    });
    await vi.advanceTimersByTimeAsync(50);
    vi.useRealTimers();
    expect(errors).toHaveLength(1);
  });
});
