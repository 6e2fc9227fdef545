import { describe, expect, it } from "vitest";

import { InterventionSession, replay } from "../src/session.js";
import { conceptRows, classRows, deltaStrip, panelSnapshot } from "../src/view.js";
import { FAKE_MODEL, fakeClient } from "./helpers/fake.js";

async function freshSession() {
  const { api, log } = fakeClient();
  const session = new InterventionSession(api, FAKE_MODEL, "test");
  await session.apply({ kind: "select", index: 0 });
  return { session, api, log };
}

describe("session state", () => {
  it("select loads the example and a plain prediction", async () => {
    const { session, log } = await freshSession();
    expect(session.example?.concepts).toEqual([1, 0, 1]);
    expect(session.baseline?.class_probs).toEqual([0.25, 0.75]);
    expect(session.latest).toBeNull();
    expect(log.predict).toBe(1);
    expect(log.intervene).toBe(0);
  });

  it("every fix issues an intervention with the full map", async () => {
    const { session, log } = await freshSession();
    await session.apply({ kind: "fix", concept: 0, bit: 1 });
    await session.apply({ kind: "fix", concept: 2, bit: 0 });
    expect(log.intervene).toBe(2);
    expect(log.lastFixed).toEqual({ "0": 1, "2": 0 });
    expect(session.displayed()?.concept_probs[0]).toBe(1);
    expect(session.displayed()?.concept_probs[2]).toBe(0);
  });

  it("unsetting everything falls back to the plain prediction view", async () => {
    const { session } = await freshSession();
    await session.apply({ kind: "fix", concept: 1, bit: 1 });
    expect(session.latest).not.toBeNull();
    await session.apply({ kind: "unset-all" });
    expect(session.latest).toBeNull();
    expect(session.displayed()).toBe(session.baseline);
    const rows = conceptRows(session);
    expect(rows.map((r) => r.probability)).toEqual([0.4, 0.5, 0.6]);
    expect(rows.every((r) => r.delta === null)).toBe(true);
  });

  it("three-state control cycles unset -> 1 -> 0 -> unset", async () => {
    const { session } = await freshSession();
    expect(session.nextAction(1)).toEqual({ kind: "fix", concept: 1, bit: 1 });
    await session.apply({ kind: "fix", concept: 1, bit: 1 });
    expect(session.conceptState(1)).toBe("fixed1");
    expect(session.nextAction(1)).toEqual({ kind: "fix", concept: 1, bit: 0 });
    await session.apply({ kind: "fix", concept: 1, bit: 0 });
    expect(session.conceptState(1)).toBe("fixed0");
    expect(session.nextAction(1)).toEqual({ kind: "unset", concept: 1 });
    await session.apply({ kind: "unset", concept: 1 });
    expect(session.conceptState(1)).toBe("unset");
  });

  it("history is append-only and records the displayed class posterior", async () => {
    const { session } = await freshSession();
    await session.apply({ kind: "fix", concept: 0, bit: 1 });
    await session.apply({ kind: "unset", concept: 0 });
    const kinds = session.history.map((h) => h.action.kind);
    expect(kinds).toEqual(["select", "fix", "unset"]);
    expect(session.history[0]?.classPosterior).toEqual([0.25, 0.75]);
    expect(session.history[1]?.classPosterior?.[1]).toBeCloseTo(0.8, 12);
  });

  it("replaying the recorded actions reproduces the final panel", async () => {
    const { session } = await freshSession();
    await session.apply({ kind: "fix", concept: 0, bit: 1 });
    await session.apply({ kind: "fix", concept: 1, bit: 0 });
    await session.apply({ kind: "unset", concept: 0 });
    const actions = session.history.map((h) => h.action);

    const again = await replay(fakeClient().api, FAKE_MODEL, actions, "test");
    expect(panelSnapshot(again)).toEqual(panelSnapshot(session));
  });

  it("mode switch re-issues the intervention only when something is fixed", async () => {
    const { session, log } = await freshSession();
    await session.apply({ kind: "mode", mode: "gradient" });
    expect(log.intervene).toBe(0);
    await session.apply({ kind: "fix", concept: 0, bit: 1 });
    await session.apply({ kind: "mode", mode: "exact" });
    expect(log.intervene).toBe(2);
    expect(session.mode).toBe("exact");
  });
});

describe("view models", () => {
  it("deltas appear only on free concepts once something is pinned", async () => {
    const { session } = await freshSession();
    await session.apply({ kind: "fix", concept: 0, bit: 1 });
    const rows = conceptRows(session);
    expect(rows[0]?.delta).toBeNull(); // pinned concept carries no delta
    expect(rows[1]?.delta).toBeCloseTo(0.05, 12);
    expect(rows[2]?.delta).toBeCloseTo(0.05, 12);
    const strip = deltaStrip(session);
    expect(strip.map((r) => r.index).sort()).toEqual([1, 2]);
  });

  it("class rows mark the argmax and the ground truth", async () => {
    const { session } = await freshSession();
    const rows = classRows(session);
    expect(rows[1]?.isArgmax).toBe(true);
    expect(rows[1]?.isTruth).toBe(true);
    expect(rows[0]?.isArgmax).toBe(false);
  });

  it("pinned probabilities display the exact bit", async () => {
    const { session } = await freshSession();
    await session.apply({ kind: "fix", concept: 2, bit: 0 });
    const rows = conceptRows(session);
    expect(rows[2]?.probability).toBe(0);
    expect(rows[2]?.state).toBe("fixed0");
  });
});
