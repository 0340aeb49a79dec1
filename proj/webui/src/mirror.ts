import { ApiError, type ApiClient } from "./api";
import type { ChangeRecord, Feature } from "./types";

export type DrawOp = { op: "draw"; layer: string; feature: Feature } | { op: "erase"; layer: string; id: number };

/**
 * Client copy of the layers, changed only by feed records. Records are
 * applied strictly in sequence; a gap stops application until resume().
 */
export class FeedMirror {
  readonly layers = new Map<string, Map<number, Feature>>();
  cursor = 0;
  stalled = false;

  constructor(readonly visible: Set<string> = new Set()) {}

  features(layer: string): Map<number, Feature> {
    let m = this.layers.get(layer);
    if (!m) {
      m = new Map();
      this.layers.set(layer, m);
    }
    return m;
  }

  /** Applies one record; returns the redraw it implies, if any. */
  apply(r: ChangeRecord): DrawOp | null {
    if (r.sequence <= this.cursor) {
      return null;
    }
    if (r.sequence !== this.cursor + 1 || this.stalled) {
      this.stalled = true;
      return null;
    }
    this.cursor = r.sequence;
    const layer = this.features(r.layer);
    let op: DrawOp;
    if (r.kind === "delete" || !r.feature) {
      layer.delete(r.id);
      op = { op: "erase", layer: r.layer, id: r.id };
    } else {
      layer.set(r.id, r.feature);
      op = { op: "draw", layer: r.layer, feature: r.feature };
    }
    return this.visible.has(r.layer) ? op : null;
  }

  /** Replays from the cursor. Returns the redraws, or null after a full reload. */
  async resume(api: ApiClient, layers: string[], pageSize = 512): Promise<DrawOp[] | null> {
    this.stalled = false;
    const ops: DrawOp[] = [];
    for (;;) {
      let page;
      try {
        page = await api.changes(this.cursor, pageSize);
      } catch (e) {
        if (e instanceof ApiError && e.status === 410) {
          await this.reload(api, layers);
          return null;
        }
        throw e;
      }
      if (page.records.length === 0) {
        return ops;
      }
      for (const r of page.records) {
        const op = this.apply(r);
        if (op) {
          ops.push(op);
        }
      }
    }
  }

  /** Replaces the state with fresh reads. */
  async reload(api: ApiClient, layers: string[]): Promise<void> {
    const { last } = await api.changes(0, 0).catch(async (e) => {
      if (e instanceof ApiError && e.status === 410) {
        return api.changes(Number.MAX_SAFE_INTEGER, 0);
      }
      throw e;
    });
    this.layers.clear();
    for (const name of layers) {
      const fc = await api.list(name);
      const m = this.features(name);
      for (const f of fc.features) {
        m.set(f.id, f);
      }
    }
    this.cursor = last;
    this.stalled = false;
  }
}

/** Incremental parser for a text/event-stream body. */
export class SseParser {
  private buffer = "";
  private data: string[] = [];
  private event = "message";
  lastEventId: string | null = null;

  push(chunk: string): { event: string; data: string }[] {
    this.buffer += chunk;
    const out: { event: string; data: string }[] = [];
    let cut: number;
    while ((cut = this.buffer.indexOf("\n")) >= 0) {
      const line = this.buffer.slice(0, cut).replace(/\r$/, "");
      this.buffer = this.buffer.slice(cut + 1);
      if (line === "") {
        if (this.data.length) {
          out.push({ event: this.event, data: this.data.join("\n") });
        }
        this.data = [];
        this.event = "message";
        continue;
      }
      if (line.startsWith(":")) {
        continue;
      }
      const colon = line.indexOf(":");
      const field = colon < 0 ? line : line.slice(0, colon);
      const value = colon < 0 ? "" : line.slice(colon + 1).replace(/^ /, "");
      if (field === "data") {
        this.data.push(value);
      } else if (field === "event") {
        this.event = value;
      } else if (field === "id") {
        this.lastEventId = value;
      }
    }
    return out;
  }
}
