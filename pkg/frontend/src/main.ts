// DOM wiring: renders the view-models and forwards user actions to the
// session. All displayed numbers come from service responses.

import { ApiClient, ApiError, ModelInfo } from "./api.js";
import { LastWinsRunner } from "./debounce.js";
import { Action, InterventionSession } from "./session.js";
import { classRows, conceptRows, deltaStrip, fmt, panelSnapshot } from "./view.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

function showError(err: unknown): void {
  const box = $("errors");
  if (err instanceof ApiError) {
    box.textContent = `service error: ${err.request} -> ${err.status}: ${err.detail}`;
  } else if (err) {
    box.textContent = String(err);
  } else {
    box.textContent = "";
  }
}

function bar(prob: number, cls: string): HTMLElement {
  const outer = document.createElement("div");
  outer.className = "bar";
  const fill = document.createElement("div");
  fill.className = `fill ${cls}`;
  fill.style.width = `${Math.round(prob * 1000) / 10}%`;
  outer.appendChild(fill);
  outer.title = String(prob);
  return outer;
}

class App {
  private session: InterventionSession;
  private runner: LastWinsRunner<void>;

  constructor(
    private readonly api: ApiClient,
    private readonly model: ModelInfo,
  ) {
    this.session = new InterventionSession(api, model, model.split);
    this.runner = new LastWinsRunner<void>(
      () => this.render(),
      (err) => {
        showError(err);
        this.render();
      },
    );
  }

  private enqueue(action: Action): void {
    this.runner.submit(async () => {
      showError(null);
      await this.session.apply(action);
    });
  }

  async start(): Promise<void> {
    $("model-info").textContent =
      `${this.model.K} concepts, ${this.model.M} classes, ` +
      `split "${this.model.split}" with ${this.model.n_examples} examples`;
    const picker = $<HTMLInputElement>("example-index");
    picker.max = String(this.model.n_examples - 1);
    picker.addEventListener("change", () =>
      this.enqueue({ kind: "select", index: Number(picker.value) }));
    $("prev").addEventListener("click", () => {
      picker.value = String(Math.max(0, Number(picker.value) - 1));
      this.enqueue({ kind: "select", index: Number(picker.value) });
    });
    $("next").addEventListener("click", () => {
      picker.value = String(
        Math.min(this.model.n_examples - 1, Number(picker.value) + 1));
      this.enqueue({ kind: "select", index: Number(picker.value) });
    });
    $("unset-all").addEventListener("click", () =>
      this.enqueue({ kind: "unset-all" }));
    $("fix-all").addEventListener("click", () => this.fixAllToTruth());
    const mode = $<HTMLSelectElement>("mode");
    mode.addEventListener("change", () =>
      this.enqueue({ kind: "mode", mode: mode.value as "exact" | "gradient" }));

    this.initInterpretation();
    await this.session.apply({ kind: "select", index: 0 });
    this.render();
  }

  private fixAllToTruth(): void {
    const truth = this.session.example?.concepts ?? [];
    truth.forEach((bit, k) =>
      this.enqueue({ kind: "fix", concept: k, bit: bit as 0 | 1 }));
  }

  private render(): void {
    const truthRow = $("truth-row");
    truthRow.textContent = this.session.example
      ? `ground truth: concepts ${this.session.example.concepts.join("")}, ` +
        `class ${this.model.class_names[this.session.example.label]}`
      : "";

    const cPanel = $("concepts");
    cPanel.replaceChildren();
    for (const row of conceptRows(this.session)) {
      const div = document.createElement("div");
      div.className = "concept-row";
      const label = document.createElement("span");
      label.className = "name";
      label.textContent = row.name;
      const control = document.createElement("button");
      control.className = `tristate ${row.state}`;
      control.textContent =
        row.state === "unset" ? "?" : row.state === "fixed1" ? "1" : "0";
      control.title = "cycle: unset / fixed-1 / fixed-0";
      control.addEventListener("click", () =>
        this.enqueue(this.session.nextAction(row.index)));
      const prob = document.createElement("span");
      prob.className = "value";
      prob.textContent = fmt(row.probability);
      prob.title = String(row.probability);
      const truth = document.createElement("span");
      truth.className = "truth";
      truth.textContent = row.truth === null ? "" : `truth ${row.truth}`;
      div.append(control, label, bar(row.probability, "concept"), prob, truth);
      cPanel.appendChild(div);
    }

    const yPanel = $("classes");
    yPanel.replaceChildren();
    for (const row of classRows(this.session)) {
      const div = document.createElement("div");
      div.className = "class-row" + (row.isArgmax ? " argmax" : "");
      const label = document.createElement("span");
      label.className = "name";
      label.textContent = row.name + (row.isTruth ? " *" : "");
      const prob = document.createElement("span");
      prob.className = "value";
      prob.textContent = fmt(row.probability);
      prob.title = String(row.probability);
      div.append(label, bar(row.probability, "cls"), prob);
      yPanel.appendChild(div);
    }

    const strip = $("delta-strip");
    strip.replaceChildren();
    for (const row of deltaStrip(this.session).slice(0, 6)) {
      const chip = document.createElement("span");
      chip.className = "delta-chip " + (row.delta! > 0 ? "up" : "down");
      chip.textContent = `${row.name} ${row.delta! > 0 ? "+" : ""}${fmt(row.delta!)}`;
      chip.title = String(row.delta);
      strip.appendChild(chip);
    }

    $("history-count").textContent =
      `${this.session.history.length} actions recorded`;
    $<HTMLTextAreaElement>("history-json").value = JSON.stringify(
      this.session.history.map((h) => h.action));
    $<HTMLTextAreaElement>("panel-json").value = JSON.stringify(
      panelSnapshot(this.session));
  }

  private initInterpretation(): void {
    const classPick = $<HTMLSelectElement>("interp-class");
    for (let m = 0; m < this.model.M; m += 1) {
      const opt = document.createElement("option");
      opt.value = String(m);
      opt.textContent = this.model.class_names[m] ?? `class_${m}`;
      classPick.appendChild(opt);
    }
    const condClass = $<HTMLSelectElement>("cond-class");
    condClass.appendChild(new Option("class-agnostic", ""));
    for (let m = 0; m < this.model.M; m += 1) {
      condClass.appendChild(
        new Option(this.model.class_names[m] ?? `class_${m}`, String(m)));
    }
    const condKp = $<HTMLSelectElement>("cond-kp");
    for (let k = 0; k < this.model.K; k += 1) {
      condKp.appendChild(
        new Option(this.model.concept_names[k] ?? `concept_${k}`, String(k)));
    }

    classPick.addEventListener("change", () => void this.renderMarginal());
    $("cond-load").addEventListener("click", () => void this.renderConditional());
    void this.renderMarginal();
  }

  private async renderMarginal(): Promise<void> {
    const classPick = $<HTMLSelectElement>("interp-class");
    try {
      const rows = await this.api.marginal(Number(classPick.value));
      const panel = $("marginal-panel");
      panel.replaceChildren();
      for (const row of rows) {
        const div = document.createElement("div");
        div.className = "concept-row";
        const label = document.createElement("span");
        label.className = "name";
        label.textContent = this.model.concept_names[row.k] ?? `concept_${row.k}`;
        const prob = document.createElement("span");
        prob.className = "value";
        prob.textContent = fmt(row.p1);
        prob.title = String(row.p1);
        div.append(label, bar(row.p1, "marginal"), prob);
        panel.appendChild(div);
      }
    } catch (err) {
      showError(err);
    }
  }

  private async renderConditional(): Promise<void> {
    const kp = Number($<HTMLSelectElement>("cond-kp").value);
    const ckp = Number($<HTMLSelectElement>("cond-ckp").value) as 0 | 1;
    const clsRaw = $<HTMLSelectElement>("cond-class").value;
    const cls = clsRaw === "" ? null : Number(clsRaw);
    const panel = $("conditional-panel");
    panel.replaceChildren();
    for (let k = 0; k < this.model.K; k += 1) {
      if (k === kp) continue;
      try {
        const cell = await this.api.conditional(k, kp, ckp, cls); // lazy cells
        const chip = document.createElement("span");
        chip.className = "heat-cell";
        chip.style.backgroundColor =
          `rgba(31, 119, 180, ${(0.15 + 0.85 * cell.value).toFixed(3)})`;
        chip.textContent =
          `${this.model.concept_names[k] ?? k}: ${fmt(cell.value)}`;
        chip.title = String(cell.value);
        panel.appendChild(chip);
      } catch (err) {
        showError(err);
        return;
      }
    }
  }
}

async function boot(): Promise<void> {
  const api = new ApiClient("");
  try {
    const model = await api.model();
    await new App(api, model).start();
  } catch (err) {
    showError(err);
  }
}

void boot();
