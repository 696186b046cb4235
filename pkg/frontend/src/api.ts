/** Typed client for the labeling service HTTP API (JSON over fetch).
 *
 * Every call resolves to a Result instead of throwing: HTTP error bodies
 * ({code, message, details}) become `api` failures and transport problems
 * become `network` failures, so callers can branch on exactly the cases the
 * service distinguishes (409 training, 422 invalid_labels, ...).
 */

export interface Status {
  state: "idle" | "training" | "error";
  message: string | null;
}

export interface ProjectView {
  project_id: string;
  class_names: string[];
  strategy: string;
  round: number;
  labels_used: number;
  label_budget: number;
  pool_size: number;
  validation_size: number;
  rounds_completed: number;
  status: Status;
}

export interface PendingCrop {
  crop_id: string;
  score: number;
  probs: number[];
  crop_url: string;
}

export interface PoolCounts {
  labeled: number;
  unlabeled: number;
  budget: number;
}

export interface BatchView {
  round: number;
  strategy: string;
  pending: PendingCrop[];
  batch_size: number;
  counts: PoolCounts;
  class_names: string[];
  status: Status;
  exhausted: boolean;
}

export interface PerClassRow {
  class: string;
  precision: number;
  recall: number;
  f1: number;
  support: number;
  precision_undefined: boolean;
  recall_undefined: boolean;
}

export interface Report {
  accuracy: number;
  macro_precision: number;
  macro_recall: number;
  macro_f1: number;
  total: number;
  averaging: string;
  per_class: PerClassRow[];
}

export interface CurvePoint {
  labels_used: number;
  accuracy: number;
  macro_precision: number;
  macro_recall: number;
  macro_f1: number;
}

export interface MetricsView {
  round: number;
  labels_used: number;
  report: Report;
  confusion: { class_names: string[]; matrix: number[][] };
  curve: CurvePoint[];
}

export interface LabelRow {
  crop_id: string;
  species: string;
}

export interface RejectedRow {
  crop_id: string;
  species: string;
  reason: string;
}

export interface ApiFailure {
  kind: "api";
  status: number;
  code: string;
  message: string;
  details: unknown[];
}

export interface NetworkFailure {
  kind: "network";
  message: string;
}

export type Failure = ApiFailure | NetworkFailure;

export type Result<T> = { ok: true; value: T } | { ok: false; error: Failure };

export class ApiClient {
  private readonly base: string;
  private readonly fetchFn: typeof fetch;

  constructor(base = "/api/v1", fetchFn?: typeof fetch) {
    this.base = base;
    // Wrap the global so it is always invoked without a bound `this`
    // (window.fetch throws when called as a method of anything else).
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  getProject(): Promise<Result<ProjectView>> {
    return this.request<ProjectView>("GET", "/project");
  }

  getBatch(): Promise<Result<BatchView>> {
    return this.request<BatchView>("GET", "/batch");
  }

  getMetrics(): Promise<Result<MetricsView>> {
    return this.request<MetricsView>("GET", "/metrics");
  }

  postLabels(labels: LabelRow[], labeler: string): Promise<Result<BatchView>> {
    return this.request<BatchView>("POST", "/labels", { labels, labeler });
  }

  postRetrain(): Promise<Result<{ status: Status }>> {
    return this.request<{ status: Status }>("POST", "/retrain");
  }

  /** Crop URLs arrive as absolute "/api/v1/..." paths; rebase them when the
   *  client points at another origin (tests drive a service on its own port). */
  cropUrl(path: string): string {
    if (this.base === "/api/v1") return path;
    return this.base.replace(/\/api\/v1$/, "") + path;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<Result<T>> {
    let response: Response;
    try {
      response = await this.fetchFn(this.base + path, {
        method,
        headers: body === undefined ? undefined : { "Content-Type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (exc) {
      const message = exc instanceof Error ? exc.message : String(exc);
      return { ok: false, error: { kind: "network", message } };
    }
    let payload: unknown = null;
    try {
      payload = await response.json();
    } catch {
      payload = null;
    }
    if (!response.ok) {
      const record = (payload ?? {}) as { code?: unknown; message?: unknown; details?: unknown };
      return {
        ok: false,
        error: {
          kind: "api",
          status: response.status,
          code: typeof record.code === "string" ? record.code : `http_${response.status}`,
          message: typeof record.message === "string" ? record.message : response.statusText,
          details: Array.isArray(record.details) ? record.details : [],
        },
      };
    }
    return { ok: true, value: payload as T };
  }
}

/** True when the failure is the service's 409 "a retrain is running" signal. */
export function isTraining(error: Failure): boolean {
  return error.kind === "api" && error.status === 409 && error.code === "training";
}

function isRejectedRow(value: unknown): value is RejectedRow {
  if (typeof value !== "object" || value === null) return false;
  const row = value as Record<string, unknown>;
  return (
    typeof row.crop_id === "string" &&
    typeof row.species === "string" &&
    typeof row.reason === "string"
  );
}

/** The per-row rejections carried by a 422 invalid_labels failure. */
export function rejectedRows(error: Failure): RejectedRow[] {
  if (error.kind !== "api" || error.code !== "invalid_labels") return [];
  return error.details.filter(isRejectedRow);
}
