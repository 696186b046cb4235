/** Local labeling queue: staged labels, focus, skip/undo, server rejections.
 *
 * The server's pending list is authoritative for WHICH crops still need
 * labels; this store only layers local, not-yet-submitted decisions on top.
 * Staged labels live in memory alone — they are flagged as unsaved in the UI
 * and the server never sees a label the user did not stage.
 */
import type { PendingCrop, RejectedRow } from "./api.js";

export interface Progress {
  /** Labels covered in this batch so far: server-acknowledged + staged. */
  done: number;
  /** Batch size announced by the server. */
  total: number;
  staged: number;
}

export interface SyncView {
  round: number;
  pending: PendingCrop[];
  batch_size: number;
}

export class LabelQueue {
  private items = new Map<string, PendingCrop>();
  /** Unstaged crops in display order; starts as the server batch order and
   *  deviates only through explicit skips. */
  private order: string[] = [];
  private staged = new Map<string, string>(); // crop_id -> species
  private undoStack: string[] = [];
  private rejected = new Map<string, string>(); // crop_id -> server reason
  private batchSize = 0;
  private serverPending = 0;
  private round = -1;

  /** Adopt a server view. A new round resets all local state (the server is
   *  authoritative); within a round, acknowledged crops drop out while local
   *  order, staged labels, and rejection marks survive. */
  sync(view: SyncView): void {
    this.items = new Map(view.pending.map((item) => [item.crop_id, item]));
    this.batchSize = view.batch_size;
    this.serverPending = view.pending.length;
    const present = new Set(this.items.keys());
    if (view.round !== this.round) {
      this.round = view.round;
      this.order = [...present];
      this.staged.clear();
      this.undoStack = [];
      this.rejected.clear();
      return;
    }
    for (const id of [...this.staged.keys()]) {
      if (!present.has(id)) this.staged.delete(id);
    }
    for (const id of [...this.rejected.keys()]) {
      if (!present.has(id)) this.rejected.delete(id);
    }
    this.undoStack = this.undoStack.filter((id) => this.staged.has(id));
    const seen = new Set<string>();
    const next: string[] = [];
    for (const id of this.order) {
      if (present.has(id) && !this.staged.has(id) && !seen.has(id)) {
        next.push(id);
        seen.add(id);
      }
    }
    for (const id of present) {
      if (!this.staged.has(id) && !seen.has(id)) {
        next.push(id);
        seen.add(id);
      }
    }
    this.order = next;
  }

  get roundNumber(): number {
    return this.round;
  }

  get focused(): PendingCrop | null {
    const id = this.order[0];
    return id === undefined ? null : this.items.get(id) ?? null;
  }

  /** Unstaged crops in display order (the local queue). */
  get queue(): PendingCrop[] {
    const out: PendingCrop[] = [];
    for (const id of this.order) {
      const item = this.items.get(id);
      if (item) out.push(item);
    }
    return out;
  }

  get stagedRows(): { crop_id: string; species: string }[] {
    return [...this.staged.entries()].map(([crop_id, species]) => ({ crop_id, species }));
  }

  get stagedCount(): number {
    return this.staged.size;
  }

  stagedSpecies(cropId: string): string | null {
    return this.staged.get(cropId) ?? null;
  }

  rejectionReason(cropId: string): string | null {
    return this.rejected.get(cropId) ?? null;
  }

  get rejectedCount(): number {
    return this.rejected.size;
  }

  progress(): Progress {
    const acknowledged = Math.max(0, this.batchSize - this.serverPending);
    return {
      done: acknowledged + this.staged.size,
      total: this.batchSize,
      staged: this.staged.size,
    };
  }

  /** Stage `species` for the focused crop and advance. Returns the staged
   *  crop id, or null when nothing is focused. */
  stage(species: string): string | null {
    const id = this.order[0];
    if (id === undefined) return null;
    this.order.shift();
    this.staged.set(id, species);
    this.rejected.delete(id);
    this.undoStack.push(id);
    return id;
  }

  /** Move the focused crop to the end of the local queue. */
  skip(): string | null {
    const id = this.order[0];
    if (id === undefined) return null;
    if (this.order.length > 1) {
      this.order.shift();
      this.order.push(id);
    }
    return id;
  }

  /** Unstage the most recently staged label and refocus that crop. */
  undo(): string | null {
    const id = this.undoStack.pop();
    if (id === undefined) return null;
    this.staged.delete(id);
    if (this.items.has(id)) this.order.unshift(id);
    return id;
  }

  /** Apply a 422 response: offending rows lose their staged label, carry the
   *  server's reason, and move to the front of the queue for a redo. Every
   *  other staged label stays staged. Returns the re-queued crop ids. */
  applyRejections(rows: RejectedRow[]): string[] {
    const requeued: string[] = [];
    for (const row of rows) {
      if (!this.items.has(row.crop_id) && !this.staged.has(row.crop_id)) continue;
      this.staged.delete(row.crop_id);
      this.rejected.set(row.crop_id, row.reason);
      if (this.items.has(row.crop_id) && !this.order.includes(row.crop_id)) {
        requeued.push(row.crop_id);
      }
    }
    if (requeued.length) this.order = [...requeued, ...this.order];
    this.undoStack = this.undoStack.filter((id) => this.staged.has(id));
    return requeued;
  }
}
