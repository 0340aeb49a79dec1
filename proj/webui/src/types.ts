// Wire types of the service API.

export type Position = number[];

export type Geometry =
  | { type: "Point"; coordinates: Position }
  | { type: "LineString"; coordinates: Position[] }
  | { type: "Polygon"; coordinates: Position[][] };

export interface Feature {
  type: "Feature";
  id: number;
  geometry: Geometry | null;
  properties: Record<string, unknown>;
}

export interface FeatureCollection {
  type: "FeatureCollection";
  features: Feature[];
}

export type ChangeKind = "insert" | "update" | "delete";

export interface ChangeRecord {
  sequence: number;
  layer: string;
  kind: ChangeKind;
  id: number;
  depth: number;
  origin: "user" | "system";
  session?: string;
  feature?: Feature;
}

export interface ChangeSet {
  ids: number[];
  records: ChangeRecord[];
  warnings: string[];
}

export interface ChangesPage {
  records: ChangeRecord[];
  next: number;
  last: number;
}

export interface LayerInfo {
  name: string;
  kind: "physical" | "view" | "virtual";
  editable: boolean;
  base?: string;
  schema: unknown;
}

export interface ErrorBody {
  code: string;
  message: string;
  layer?: string;
  feature?: number;
}

export type BBox = [number, number, number, number];
