// Typed client for the ecbm HTTP service. Every number shown in the UI
// comes out of these responses; the client never derives probabilities.

export interface ModelInfo {
  K: number;
  M: number;
  concept_names: string[];
  class_names: string[];
  lambdas: Record<string, number>;
  split: string;
  n_examples: number;
}

export interface ExampleRecord {
  index: number;
  features: number[];
  concepts: number[];
  label: number;
}

export interface Energies {
  class: number;
  concept: number;
  concept_per_k: number[];
  global: number;
  joint: number;
}

export interface Rounded {
  concepts: number[];
  class: number;
}

export interface PredictResponse {
  concept_probs: number[];
  class_probs: number[];
  energies: Energies;
  rounded: Rounded;
}

export interface InterveneResponse {
  mode: "exact" | "gradient";
  concept_probs: number[];
  class_probs: number[];
  rounded: Rounded;
  fixed: Record<string, number>;
}

export interface MarginalRow {
  k: number;
  p1: number;
}

export interface ConditionalCell {
  k: number;
  kp: number;
  ckp: number;
  class: number | null;
  value: number;
}

export type FixedMap = Record<number, 0 | 1>;

// Carries the failing request so the UI can echo it inline.
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
    readonly request: string,
  ) {
    super(`${request} -> ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async call<T>(path: string, init?: RequestInit): Promise<T> {
    const label = `${init?.method ?? "GET"} ${path}`;
    let resp: Response;
    try {
      resp = await this.fetchFn(`${this.baseUrl}${path}`, init);
    } catch (err) {
      throw new ApiError(0, String(err), label);
    }
    const text = await resp.text();
    if (!resp.ok) {
      let detail = text;
      try {
        const body = JSON.parse(text) as { detail?: string; hint?: string };
        detail = body.detail ?? text;
        if (body.hint) detail += ` (${body.hint})`;
      } catch {
        // non-JSON error body: show it raw
      }
      throw new ApiError(resp.status, detail, label);
    }
    return JSON.parse(text) as T;
  }

  health(): Promise<{ status: string }> {
    return this.call("/health");
  }

  model(): Promise<ModelInfo> {
    return this.call("/model");
  }

  example(split: string, index: number): Promise<ExampleRecord> {
    return this.call(`/examples?split=${encodeURIComponent(split)}&index=${index}`);
  }

  predict(features: number[]): Promise<PredictResponse> {
    return this.call("/predict", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ features }),
    });
  }

  intervene(
    features: number[],
    fixed: FixedMap,
    mode: "exact" | "gradient",
  ): Promise<InterveneResponse> {
    const encoded: Record<string, number> = {};
    for (const [k, bit] of Object.entries(fixed)) encoded[k] = bit;
    return this.call("/intervene", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ features, fixed: encoded, mode }),
    });
  }

  marginal(classIndex: number): Promise<MarginalRow[]> {
    return this.call(`/interpret/marginal?class=${classIndex}`);
  }

  conditional(
    k: number,
    kp: number,
    ckp: 0 | 1,
    classIndex: number | null,
  ): Promise<ConditionalCell> {
    const base = `/interpret/conditional?k=${k}&kp=${kp}&ckp=${ckp}`;
    return this.call(classIndex === null ? base : `${base}&class=${classIndex}`);
  }
}
