// Pure view-model builders: UI state is a function of the session and the
// last service responses. The DOM layer only renders these structures,
// which also makes panel snapshots comparable in tests and replays.

import { InterventionSession, ConceptState } from "./session.js";

export interface ConceptRow {
  index: number;
  name: string;
  probability: number; // from the service (intervened if any fixes, else plain)
  baseline: number; // plain-prediction probability
  rounded: number;
  truth: number | null;
  state: ConceptState;
  // movement of a non-fixed concept caused by the current fixes; the
  // correction-propagation signal (null when nothing is fixed or the
  // concept itself is pinned)
  delta: number | null;
}

export interface ClassRow {
  index: number;
  name: string;
  probability: number;
  isArgmax: boolean;
  isTruth: boolean;
}

export interface PanelSnapshot {
  example: number | null;
  mode: string;
  fixed: Record<number, 0 | 1>;
  concepts: ConceptRow[];
  classes: ClassRow[];
}

export function conceptRows(session: InterventionSession): ConceptRow[] {
  const shown = session.displayed();
  const base = session.baseline;
  if (!shown || !base || !session.example) return [];
  const anyFixed = Object.keys(session.fixed).length > 0;
  return shown.concept_probs.map((p, k) => {
    const state = session.conceptState(k);
    const baseP = base.concept_probs[k] ?? 0;
    return {
      index: k,
      name: session.model.concept_names[k] ?? `concept_${k}`,
      probability: p,
      baseline: baseP,
      rounded: shown.rounded.concepts[k] ?? 0,
      truth: session.example!.concepts[k] ?? null,
      state,
      delta: anyFixed && state === "unset" ? p - baseP : null,
    };
  });
}

export function classRows(session: InterventionSession): ClassRow[] {
  const shown = session.displayed();
  if (!shown || !session.example) return [];
  const argmax = shown.rounded.class;
  return shown.class_probs.map((p, m) => ({
    index: m,
    name: session.model.class_names[m] ?? `class_${m}`,
    probability: p,
    isArgmax: m === argmax,
    isTruth: m === session.example!.label,
  }));
}

// Non-fixed concepts ordered by how far the current fixes moved them.
export function deltaStrip(session: InterventionSession): ConceptRow[] {
  return conceptRows(session)
    .filter((row) => row.delta !== null && row.delta !== 0)
    .sort((a, b) => Math.abs(b.delta!) - Math.abs(a.delta!));
}

export function panelSnapshot(session: InterventionSession): PanelSnapshot {
  return {
    example: session.example?.index ?? null,
    mode: session.mode,
    fixed: { ...session.fixed },
    concepts: conceptRows(session),
    classes: classRows(session),
  };
}

// Display rule: three decimals, raw value available on hover.
export function fmt(x: number): string {
  return x.toFixed(3);
}
