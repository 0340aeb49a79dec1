import type { BBox } from "./types";

export type Tool = "select" | "move-vertex" | "draw" | "attribute";

export interface ViewState {
  center: [number, number];
  /** Scale denominator, 1:scale. */
  scale: number;
  visible: Set<string>;
  tool: Tool;
  session: string | null;
}

export interface ScaleBand {
  min: number;
  max: number;
}

// Standard rendering pixel of 0.28 mm.
export const kPixelMetres = 0.00028;

/** Ground rectangle shown by a viewport of w x h pixels. */
export function viewExtent(view: ViewState, widthPx: number, heightPx: number): BBox {
  const m = view.scale * kPixelMetres;
  const hw = (widthPx * m) / 2;
  const hh = (heightPx * m) / 2;
  const [x, y] = view.center;
  return [x - hw, y - hh, x + hw, y + hh];
}

/** Extents are reported only inside the band, bounds included. */
export function reportsExtent(view: ViewState, band: ScaleBand): boolean {
  return view.session !== null && view.scale >= band.min && view.scale <= band.max;
}
