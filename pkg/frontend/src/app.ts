/** Application controller: wires the API client, the local label queue, the
 *  keymap, and the curve chart into one keyboard-first page.
 *
 *  Concurrency stance: one user session per tab; the server is authoritative.
 *  A 409 means a retrain is running — show a non-blocking banner and poll the
 *  project status until it goes idle. A 422 lists the rejected rows — those
 *  crops are highlighted and re-queued while every other staged label stays
 *  staged. Labels are only ever sent by an explicit submit.
 */
import {
  ApiClient,
  isTraining,
  rejectedRows,
  type BatchView,
  type CurvePoint,
  type Failure,
  type MetricsView,
  type PendingCrop,
  type ProjectView,
} from "./api.js";
import { renderCurve } from "./curve.js";
import { append, clear, el, pct, shortId, type Child } from "./dom.js";
import {
  KEY_SEQUENCE,
  RESERVED_KEYS,
  loadKeymap,
  normalizeKey,
  remap,
  saveKeymap,
  speciesForKey,
  type Keymap,
  type KeyValueStore,
} from "./keymap.js";
import { LabelQueue } from "./staging.js";

export interface AppOptions {
  /** API prefix; point it at another origin to drive a remote service. */
  base?: string;
  fetchFn?: typeof fetch;
  /** Browser storage for keymap + labeler name; null disables persistence. */
  storage?: KeyValueStore | null;
  /** Status poll cadence while the service retrains. */
  pollIntervalMs?: number;
}

interface Banner {
  tone: "info" | "busy" | "error";
  text: string;
  retry?: boolean;
}

const LABELER_STORAGE_KEY = "camloop:labeler";
const SUGGESTION_COUNT = 3;

function defaultStorage(): KeyValueStore | null {
  try {
    return typeof localStorage === "undefined" ? null : localStorage;
  } catch {
    return null;
  }
}

export class App {
  readonly api: ApiClient;
  readonly queue = new LabelQueue();
  keymap: Keymap = new Map();
  project: ProjectView | null = null;
  batch: BatchView | null = null;
  metrics: MetricsView | null = null;
  curvePoints: CurvePoint[] = [];

  private readonly root: HTMLElement;
  private readonly storage: KeyValueStore | null;
  private readonly pollMs: number;
  private banner: Banner | null = null;
  private hint = "";
  private labeler: string;
  private submitting = false;
  private pollTimer: ReturnType<typeof setTimeout> | null = null;
  private readonly onKeyDown = (event: KeyboardEvent): void => this.handleKey(event);

  constructor(root: HTMLElement, options: AppOptions = {}) {
    this.root = root;
    this.api = new ApiClient(options.base ?? "/api/v1", options.fetchFn);
    this.storage = options.storage === undefined ? defaultStorage() : options.storage;
    this.pollMs = options.pollIntervalMs ?? 2000;
    this.labeler = this.readStoredLabeler();
  }

  async start(): Promise<void> {
    document.addEventListener("keydown", this.onKeyDown);
    const project = await this.api.getProject();
    if (!project.ok) {
      this.banner = failureBanner(project.error);
      this.render();
      return;
    }
    this.project = project.value;
    this.keymap = loadKeymap(this.storage, project.value.project_id, project.value.class_names);
    // Persist the resolved assignment so a refresh sees the same keys even
    // before the first manual remap.
    saveKeymap(this.storage, project.value.project_id, this.keymap);
    await this.refreshBatch();
    if (project.value.rounds_completed > 0) {
      await this.refreshMetrics();
    }
    this.render();
  }

  /** Detach document listeners and stop polling (used by tests and teardown). */
  stop(): void {
    document.removeEventListener("keydown", this.onKeyDown);
    if (this.pollTimer !== null) {
      clearTimeout(this.pollTimer);
      this.pollTimer = null;
    }
  }

  get trainingBannerShown(): boolean {
    return this.banner !== null && this.banner.tone === "busy";
  }

  // ------------------------------------------------------------------ input

  handleKey(event: KeyboardEvent): void {
    if (event.altKey || event.ctrlKey || event.metaKey) return;
    const target = event.target instanceof HTMLElement ? event.target : null;
    if (target && (target.tagName === "INPUT" || target.tagName === "TEXTAREA")) return;
    const key = normalizeKey(event.key);

    // A focused species row captures the next assignable key as its new key.
    if (target?.dataset.remap !== undefined) {
      if (KEY_SEQUENCE.includes(key)) {
        event.preventDefault();
        this.remapSpecies(target.dataset.remap ?? "", key);
      } else if (key === "Escape") {
        target.blur();
      }
      return;
    }

    if (key === RESERVED_KEYS.submit) {
      event.preventDefault();
      void this.submit();
      return;
    }
    if (key === RESERVED_KEYS.undo) {
      event.preventDefault();
      this.undo();
      return;
    }
    if (key === RESERVED_KEYS.skip) {
      event.preventDefault();
      this.skip();
      return;
    }
    const species = speciesForKey(this.keymap, key);
    if (species === null) {
      // Printable but unmapped: show a hint, change nothing. Navigation keys
      // (Tab, arrows, ...) pass through untouched.
      if (key.length === 1) {
        this.hint = `key '${key}' is not assigned to a species`;
        this.render();
      }
      return;
    }
    event.preventDefault();
    this.stage(species);
  }

  private stage(species: string): void {
    const id = this.queue.stage(species);
    this.hint = id === null ? "nothing left to label in this batch" : "";
    this.render();
  }

  private undo(): void {
    const id = this.queue.undo();
    this.hint = id === null ? "nothing to undo" : "";
    this.render();
  }

  private skip(): void {
    const id = this.queue.skip();
    this.hint = id === null ? "nothing to skip" : "";
    this.render();
  }

  private remapSpecies(species: string, key: string): void {
    const result = remap(this.keymap, species, key);
    if (!result.ok) {
      this.hint = result.reason;
      this.render();
      return;
    }
    this.keymap = result.map;
    if (this.project) saveKeymap(this.storage, this.project.project_id, this.keymap);
    this.hint = result.swapped
      ? `'${key}' now labels ${species} (swapped with ${result.swapped})`
      : `'${key}' now labels ${species}`;
    this.render();
    for (const row of this.root.querySelectorAll<HTMLElement>("[data-remap]")) {
      if (row.dataset.remap === species) {
        row.focus();
        break;
      }
    }
  }

  // ----------------------------------------------------------------- server

  async submit(): Promise<void> {
    if (this.submitting) return;
    const rows = this.queue.stagedRows;
    if (rows.length === 0) {
      this.hint = "stage at least one label before submitting";
      this.render();
      return;
    }
    this.submitting = true;
    this.render();
    const result = await this.api.postLabels(rows, this.labeler);
    this.submitting = false;
    if (result.ok) {
      this.adoptBatch(result.value);
      if (result.value.status.state === "training") {
        this.enterTraining();
      } else {
        this.banner = null;
        this.hint = `${rows.length} label${rows.length === 1 ? "" : "s"} saved`;
      }
      this.render();
      return;
    }
    const error = result.error;
    if (error.kind === "network") {
      this.banner = {
        tone: "error",
        text: `could not reach the service (${error.message}) — staged labels kept`,
        retry: true,
      };
      this.render();
      return;
    }
    if (isTraining(error)) {
      // Submissions during a retrain are rejected, never queued; keep the
      // staged set and resubmit once the service is idle again.
      this.enterTraining();
      this.render();
      return;
    }
    if (error.code === "invalid_labels") {
      const rejected = rejectedRows(error);
      this.queue.applyRejections(rejected);
      this.banner = {
        tone: "error",
        text: `${rejected.length} label${rejected.length === 1 ? "" : "s"} rejected — fix the highlighted crops and resubmit`,
      };
      this.render();
      return;
    }
    this.banner = failureBanner(error);
    this.render();
  }

  private adoptBatch(view: BatchView): void {
    this.batch = view;
    this.queue.sync(view);
    if (this.project) {
      this.project.labels_used = view.counts.labeled;
      this.project.round = view.round;
      this.project.status = view.status;
    }
  }

  private async refreshBatch(): Promise<void> {
    const batch = await this.api.getBatch();
    if (!batch.ok) {
      if (isTraining(batch.error)) {
        this.enterTraining();
      } else {
        this.banner = failureBanner(batch.error);
      }
      return;
    }
    this.banner = null;
    this.adoptBatch(batch.value);
  }

  private async refreshMetrics(): Promise<void> {
    const metrics = await this.api.getMetrics();
    if (!metrics.ok) {
      if (metrics.error.kind === "api" && metrics.error.code === "no_rounds") {
        this.metrics = null;
        this.curvePoints = [];
      }
      return; // other failures: keep the last known curve
    }
    this.metrics = metrics.value;
    this.curvePoints = metrics.value.curve;
  }

  private enterTraining(): void {
    this.banner = {
      tone: "busy",
      text: "retraining in progress — the next batch appears when it finishes",
    };
    this.schedulePoll();
  }

  private schedulePoll(): void {
    if (this.pollTimer !== null) return;
    this.pollTimer = setTimeout(() => {
      this.pollTimer = null;
      void this.pollStatus();
    }, this.pollMs);
  }

  private async pollStatus(): Promise<void> {
    const project = await this.api.getProject();
    if (!project.ok) {
      this.schedulePoll(); // transient failure: keep polling
      return;
    }
    this.project = project.value;
    if (project.value.status.state === "training") {
      this.render();
      this.schedulePoll();
      return;
    }
    if (project.value.status.state === "error") {
      this.banner = {
        tone: "error",
        text: `training failed: ${project.value.status.message ?? "unknown error"}`,
      };
      this.render();
      return;
    }
    this.banner = null;
    await this.refreshBatch();
    await this.refreshMetrics();
    this.render();
  }

  // -------------------------------------------------------------- rendering

  render(): void {
    clear(this.root);
    const shell = el("div", { class: "app" });
    shell.appendChild(this.renderHeader());
    if (this.banner) shell.appendChild(this.renderBanner(this.banner));
    const hint = el("p", { class: "hint", role: "status", "aria-live": "polite" }, this.hint);
    shell.appendChild(hint);
    if (this.project) {
      const main = el("main", { class: "layout" });
      main.appendChild(this.renderQueueSection());
      main.appendChild(this.renderSidebar());
      shell.appendChild(main);
      shell.appendChild(this.renderCurveSection());
    }
    this.root.appendChild(shell);
  }

  private renderHeader(): HTMLElement {
    const header = el("header", { class: "masthead" });
    if (!this.project) {
      header.appendChild(el("h1", {}, "species labeling"));
      return header;
    }
    const project = this.project;
    header.appendChild(el("h1", {}, project.project_id));
    const counts = this.batch?.counts ?? {
      labeled: project.labels_used,
      unlabeled: project.pool_size - project.labels_used,
      budget: project.label_budget,
    };
    header.appendChild(
      el(
        "p",
        { class: "facts" },
        `${project.strategy} strategy · round ${this.queue.roundNumber >= 0 ? this.queue.roundNumber : project.round}`,
        ` · ${counts.labeled}/${counts.budget} labels used`,
        ` · ${counts.unlabeled} unlabeled in pool`,
        ` · ${project.validation_size} validation`,
      ),
    );
    const input = el("input", {
      id: "labeler",
      type: "text",
      value: this.labeler,
      "aria-label": "labeler name",
    });
    input.addEventListener("change", () => {
      this.labeler = input.value.trim() || "human";
      this.storeLabeler();
    });
    header.appendChild(el("label", { class: "labeler" }, "labeler ", input));
    return header;
  }

  private renderBanner(banner: Banner): HTMLElement {
    const box = el(
      "div",
      { class: `banner banner-${banner.tone}`, role: "status", "aria-live": "polite" },
      el("span", {}, banner.text),
    );
    if (banner.retry) {
      const retry = el("button", { type: "button", class: "retry" }, "retry submit");
      retry.addEventListener("click", () => void this.submit());
      box.appendChild(retry);
    }
    return box;
  }

  private renderQueueSection(): HTMLElement {
    const section = el("section", { class: "queue", "aria-label": "labeling queue" });
    const pending = this.queue.queue;
    const focused = pending[0] ?? null;

    if (focused === null) {
      section.appendChild(this.renderEmptyQueue());
    } else {
      section.appendChild(this.renderFocusedCrop(focused));
      if (pending.length > 1) {
        const strip = el("ol", { class: "upcoming", "aria-label": "up next" });
        for (const item of pending.slice(1)) {
          strip.appendChild(this.renderThumb(item));
        }
        section.appendChild(strip);
      }
    }

    const staged = this.queue.stagedRows;
    if (staged.length > 0) {
      const list = el("ul", { class: "staged-list", "aria-label": "staged labels" });
      for (const row of staged) {
        list.appendChild(
          el(
            "li",
            { class: "staged-chip", "data-crop-id": row.crop_id },
            el("code", {}, shortId(row.crop_id)),
            ` → ${row.species}`,
          ),
        );
      }
      section.appendChild(
        el(
          "div",
          { class: "staged" },
          el("h3", {}, `staged labels (${staged.length}) `, el("span", { class: "unsaved" }, "unsaved")),
          list,
        ),
      );
    }
    return section;
  }

  private renderEmptyQueue(): HTMLElement {
    const staged = this.queue.stagedCount;
    if (staged > 0) {
      return el(
        "div",
        { class: "queue-empty" },
        el("h2", {}, "batch fully staged"),
        el("p", {}, `press Enter to submit the ${staged} staged label${staged === 1 ? "" : "s"}`),
      );
    }
    if (this.batch?.exhausted) {
      return el(
        "div",
        { class: "queue-empty" },
        el("h2", {}, "label budget exhausted"),
        el("p", {}, "no more batches — the learning curve below is the final word"),
      );
    }
    return el(
      "div",
      { class: "queue-empty" },
      el("h2", {}, "round complete"),
      el("p", {}, "waiting for the next batch"),
    );
  }

  private renderFocusedCrop(item: PendingCrop): HTMLElement {
    const reason = this.queue.rejectionReason(item.crop_id);
    const card = el("figure", {
      class: reason === null ? "crop-card focused" : "crop-card focused invalid",
      "data-crop-id": item.crop_id,
    });
    card.appendChild(
      el("img", {
        src: this.api.cropUrl(item.crop_url),
        alt: `crop ${shortId(item.crop_id)}`,
        class: "crop-image",
      }),
    );
    const caption = el("figcaption", {});
    caption.appendChild(
      el(
        "p",
        { class: "score" },
        `${this.batch?.strategy ?? "uncertainty"} score ${item.score.toFixed(4)}`,
        el("span", { class: "crop-id" }, ` · ${shortId(item.crop_id)}`),
      ),
    );
    if (reason !== null) {
      caption.appendChild(el("p", { class: "rejection", role: "alert" }, `rejected: ${reason}`));
    }
    caption.appendChild(this.renderSuggestions(item));
    card.appendChild(caption);
    return card;
  }

  /** Top model suggestions, shown but never preselected. */
  private renderSuggestions(item: PendingCrop): HTMLElement {
    const names = this.batch?.class_names ?? this.project?.class_names ?? [];
    const ranked = item.probs
      .map((prob, index) => ({ prob, name: names[index] ?? `class ${index}` }))
      .sort((a, b) => b.prob - a.prob)
      .slice(0, SUGGESTION_COUNT);
    const list = el("ol", { class: "suggestions", "aria-label": "model suggestions" });
    for (const entry of ranked) {
      const bar = el("span", { class: "prob-bar" });
      bar.style.width = `${Math.round(100 * Math.min(1, Math.max(0, entry.prob)))}%`;
      const keycap = this.keymap.get(entry.name);
      list.appendChild(
        el(
          "li",
          { class: "suggestion" },
          el("span", { class: "prob-track" }, bar),
          el("span", { class: "suggestion-name" }, entry.name),
          keycap === undefined ? null : el("kbd", {}, keycap),
          el("span", { class: "suggestion-prob" }, pct(entry.prob)),
        ),
      );
    }
    return list;
  }

  private renderThumb(item: PendingCrop): HTMLElement {
    const reason = this.queue.rejectionReason(item.crop_id);
    const thumb = el("li", {
      class: reason === null ? "thumb" : "thumb invalid",
      "data-crop-id": item.crop_id,
    });
    thumb.appendChild(
      el("img", {
        src: this.api.cropUrl(item.crop_url),
        alt: `crop ${shortId(item.crop_id)}`,
        loading: "lazy",
      }),
    );
    if (reason !== null) {
      thumb.appendChild(el("span", { class: "rejection" }, reason));
    }
    return thumb;
  }

  private renderSidebar(): HTMLElement {
    const aside = el("aside", { class: "sidebar" });
    aside.appendChild(el("h2", {}, "species keys"));
    const names = this.batch?.class_names ?? this.project?.class_names ?? [];
    const list = el("ul", { class: "keymap-list" });
    for (const name of names) {
      const key = this.keymap.get(name);
      const row = el(
        "button",
        { type: "button", class: "class-row", "data-remap": name },
        el("kbd", {}, key ?? "·"),
        el("span", { class: "class-name" }, name),
      );
      list.appendChild(el("li", {}, row));
    }
    aside.appendChild(list);
    aside.appendChild(
      el("p", { class: "remap-help" }, "focus a species and press a new key to remap (kept in this browser)"),
    );

    const progress = this.queue.progress();
    const meter = el("div", { class: "progress-track", role: "presentation" });
    const fill = el("span", { class: "progress-fill" });
    fill.style.width = progress.total === 0 ? "0%" : `${Math.round((100 * progress.done) / progress.total)}%`;
    meter.appendChild(fill);
    const parts: Child[] = [el("span", { class: "progress-count" }, `${progress.done}/${progress.total}`), " this batch"];
    if (progress.staged > 0) {
      parts.push(" · ", el("span", { class: "unsaved" }, `${progress.staged} staged — unsaved`));
    }
    aside.appendChild(
      el("div", { class: "progress", "aria-label": "batch progress" }, meter, el("p", {}, ...parts)),
    );

    const submit = el(
      "button",
      {
        type: "button",
        id: "submit",
        class: "submit",
        disabled: this.submitting || this.queue.stagedCount === 0,
      },
      this.submitting ? "submitting…" : "submit staged labels (Enter)",
    );
    submit.addEventListener("click", () => void this.submit());
    aside.appendChild(submit);

    aside.appendChild(
      el(
        "p",
        { class: "shortcuts" },
        el("kbd", {}, "Space"),
        " skip · ",
        el("kbd", {}, "Backspace"),
        " undo · ",
        el("kbd", {}, "Enter"),
        " submit",
      ),
    );
    return aside;
  }

  private renderCurveSection(): HTMLElement {
    const section = el("section", { class: "curve", "aria-label": "learning curve" });
    section.appendChild(el("h2", {}, "learning curve"));
    if (this.curvePoints.length === 0) {
      section.appendChild(
        el(
          "p",
          { class: "curve-hint" },
          "no completed rounds yet — the curve appears after the first training round",
        ),
      );
      return section;
    }
    section.appendChild(renderCurve(this.curvePoints));
    if (this.metrics) {
      const report = this.metrics.report;
      section.appendChild(
        el(
          "p",
          { class: "latest-metrics" },
          `round ${this.metrics.round} on ${this.metrics.labels_used} labels: `,
          `accuracy ${pct(report.accuracy)} · macro precision ${pct(report.macro_precision)}`,
          ` · macro recall ${pct(report.macro_recall)} · macro F1 ${pct(report.macro_f1)}`,
        ),
      );
    }
    return section;
  }

  // ------------------------------------------------------------ persistence

  private readStoredLabeler(): string {
    if (this.storage) {
      try {
        const stored = this.storage.getItem(LABELER_STORAGE_KEY);
        if (stored) return stored;
      } catch {
        // fall through to the default
      }
    }
    return "human";
  }

  private storeLabeler(): void {
    if (!this.storage) return;
    try {
      this.storage.setItem(LABELER_STORAGE_KEY, this.labeler);
    } catch {
      // storage unavailable: the name still applies for this session
    }
  }
}

function failureBanner(error: Failure): Banner {
  if (error.kind === "network") {
    return { tone: "error", text: `could not reach the service (${error.message})`, retry: false };
  }
  return { tone: "error", text: `${error.code}: ${error.message}` };
}
