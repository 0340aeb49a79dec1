import { ApiError, type ApiClient } from "./api";
import type { ChangeSet, Feature, Geometry } from "./types";

// A completed user gesture. Each one maps to exactly one API call.
export type Gesture =
  | { kind: "vertex-drop" | "drag-end"; layer: string; id: number; geometry: Geometry }
  | { kind: "attribute-commit"; layer: string; id: number; properties: Record<string, unknown> }
  | { kind: "delete"; layer: string; id: number }
  | { kind: "draw"; layer: string; feature: Omit<Feature, "id"> };

export type EditOutcome =
  | { ok: true; changes: ChangeSet }
  // Shown inline on the edited feature.
  | { ok: false; reason: "server"; status: number; code: string; message: string; featureId?: number }
  // The gesture is visually reverted; retry re-sends the same call.
  | { ok: false; reason: "network"; message: string; revert: true; retry: () => Promise<EditOutcome> };

function dispatch(api: ApiClient, g: Gesture): Promise<ChangeSet> {
  switch (g.kind) {
    case "vertex-drop":
    case "drag-end":
      return api.update(g.layer, g.id, { geometry: g.geometry });
    case "attribute-commit":
      return api.update(g.layer, g.id, { properties: g.properties });
    case "delete":
      return api.remove(g.layer, g.id);
    case "draw":
      return api.insert(g.layer, g.feature);
  }
}

export async function sendEdit(api: ApiClient, g: Gesture): Promise<EditOutcome> {
  try {
    return { ok: true, changes: await dispatch(api, g) };
  } catch (e) {
    if (e instanceof ApiError) {
      return {
        ok: false,
        reason: "server",
        status: e.status,
        code: e.body.code,
        message: e.body.message,
        featureId: "id" in g ? g.id : undefined,
      };
    }
    return {
      ok: false,
      reason: "network",
      message: e instanceof Error ? e.message : String(e),
      revert: true,
      retry: () => sendEdit(api, g),
    };
  }
}
