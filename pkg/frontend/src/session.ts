// Client-side intervention session: the selected example, the current
// fixed-concept map, the latest service responses, and an append-only
// action history. Replaying the history against the same service must
// reproduce the final panel, so every state change goes through apply().

import {
  ApiClient,
  ExampleRecord,
  FixedMap,
  InterveneResponse,
  ModelInfo,
  PredictResponse,
} from "./api.js";

export type ConceptState = "unset" | "fixed0" | "fixed1";

export type Action =
  | { kind: "select"; index: number }
  | { kind: "fix"; concept: number; bit: 0 | 1 }
  | { kind: "unset"; concept: number }
  | { kind: "unset-all" }
  | { kind: "mode"; mode: "exact" | "gradient" };

export interface HistoryEntry {
  action: Action;
  // class posterior displayed after the action resolved (from the service)
  classPosterior: number[] | null;
}

export class InterventionSession {
  readonly history: HistoryEntry[] = [];
  example: ExampleRecord | null = null;
  fixed: FixedMap = {};
  mode: "exact" | "gradient" = "exact";
  baseline: PredictResponse | null = null;
  latest: InterveneResponse | null = null;

  constructor(
    private readonly api: ApiClient,
    readonly model: ModelInfo,
    readonly split: string = "test",
  ) {}

  conceptState(k: number): ConceptState {
    const bit = this.fixed[k];
    if (bit === undefined) return "unset";
    return bit === 1 ? "fixed1" : "fixed0";
  }

  // Three-state cycle for the per-concept control: unset -> 1 -> 0 -> unset.
  nextAction(k: number): Action {
    const state = this.conceptState(k);
    if (state === "unset") return { kind: "fix", concept: k, bit: 1 };
    if (state === "fixed1") return { kind: "fix", concept: k, bit: 0 };
    return { kind: "unset", concept: k };
  }

  // Probabilities currently on display (never computed locally).
  displayed(): PredictResponse | InterveneResponse | null {
    return this.latest ?? this.baseline;
  }

  async apply(action: Action): Promise<void> {
    switch (action.kind) {
      case "select": {
        this.example = await this.api.example(this.split, action.index);
        this.baseline = await this.api.predict(this.example.features);
        this.fixed = {};
        this.latest = null;
        break;
      }
      case "fix": {
        this.requireExample();
        this.fixed = { ...this.fixed, [action.concept]: action.bit };
        await this.refresh();
        break;
      }
      case "unset": {
        this.requireExample();
        const next = { ...this.fixed };
        delete next[action.concept];
        this.fixed = next;
        await this.refresh();
        break;
      }
      case "unset-all": {
        this.requireExample();
        this.fixed = {};
        this.latest = null; // panel falls back to the plain prediction
        break;
      }
      case "mode": {
        this.mode = action.mode;
        if (this.example && Object.keys(this.fixed).length > 0) {
          await this.refresh();
        }
        break;
      }
    }
    this.history.push({
      action,
      classPosterior: this.displayed()?.class_probs.slice() ?? null,
    });
  }

  private requireExample(): void {
    if (!this.example) throw new Error("no example selected");
  }

  private async refresh(): Promise<void> {
    if (Object.keys(this.fixed).length === 0) {
      this.latest = null; // empty map: show the plain /predict view
      return;
    }
    this.latest = await this.api.intervene(
      this.example!.features,
      this.fixed,
      this.mode,
    );
  }
}

// Replays a recorded action list against a (possibly fresh) service
// connection; with a deterministic service the final panel matches.
export async function replay(
  api: ApiClient,
  model: ModelInfo,
  actions: Action[],
  split = "test",
): Promise<InterventionSession> {
  const session = new InterventionSession(api, model, split);
  for (const action of actions) {
    await session.apply(action);
  }
  return session;
}
