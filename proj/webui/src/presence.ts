import type { Feature, Position } from "./types";

/** Stable colour per user id. */
export function userColor(userId: string): string {
  let h = 0x811c9dc5;
  for (let i = 0; i < userId.length; i++) {
    h ^= userId.charCodeAt(i);
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  const hue = h % 360;
  const light = 40 + ((h >>> 9) % 3) * 10;
  return `hsl(${hue}, 70%, ${light}%)`;
}

export function hexFill(status: unknown): "red" | "blue" {
  return status === "done" ? "blue" : "red";
}

/** Area centroid of a closed ring. */
export function ringCentroid(ring: Position[]): Position {
  let a = 0;
  let cx = 0;
  let cy = 0;
  for (let i = 0; i + 1 < ring.length; i++) {
    const [x0, y0] = ring[i];
    const [x1, y1] = ring[i + 1];
    const k = x0 * y1 - x1 * y0;
    a += k;
    cx += (x0 + x1) * k;
    cy += (y0 + y1) * k;
  }
  if (a === 0) {
    return ring[0];
  }
  return [cx / (3 * a), cy / (3 * a)];
}

export interface ConflictLabel {
  text: string;
  at: Position;
  users: [string, string];
}

export function conflictLabel(conflict: Feature): ConflictLabel | null {
  const g = conflict.geometry;
  if (!g || g.type !== "Polygon") {
    return null;
  }
  const p = conflict.properties;
  const a = String(p.user_a);
  const b = String(p.user_b);
  const minutes = Math.round(Number(p.dt_ms) / 60000);
  const text = p.kind === "revisit" ? `${a} revisited after ${minutes} min` : `${a} and ${b} editing here`;
  return { text, at: ringCentroid(g.coordinates[0]), users: [a, b] };
}
