import type {
  BBox,
  ChangeSet,
  ChangesPage,
  ErrorBody,
  Feature,
  FeatureCollection,
  Geometry,
  LayerInfo,
} from "./types";

export type FetchFn = (input: string, init?: RequestInit) => Promise<Response>;

/** Non-2xx answer from the service. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly body: ErrorBody,
  ) {
    super(body.message);
  }
}

/** The request never got an answer. */
export class NetworkError extends Error {}

export interface FeaturePatch {
  geometry?: Geometry;
  properties?: Record<string, unknown>;
}

export class ApiClient {
  private session: string | null = null;
  userId: string | null = null;

  constructor(
    private readonly base: string,
    private readonly fetchFn: FetchFn = (input, init) => fetch(input, init),
  ) {}

  async openSession(name: string): Promise<string> {
    const s = await this.call<{ session: string; user_id: string }>("POST", "/sessions", { name });
    this.session = s.session;
    this.userId = s.user_id;
    return s.user_id;
  }

  layers(): Promise<LayerInfo[]> {
    return this.call("GET", "/layers");
  }

  list(layer: string, bbox?: BBox): Promise<FeatureCollection> {
    const q = bbox ? `?bbox=${bbox.join(",")}` : "";
    return this.call("GET", `/layers/${encodeURIComponent(layer)}/features${q}`);
  }

  get(layer: string, id: number): Promise<Feature> {
    return this.call("GET", `/layers/${encodeURIComponent(layer)}/features/${id}`);
  }

  insert(layer: string, feature: Omit<Feature, "id"> & { id?: number }): Promise<ChangeSet> {
    return this.call("POST", `/layers/${encodeURIComponent(layer)}/features`, feature);
  }

  update(layer: string, id: number, patch: FeaturePatch): Promise<ChangeSet> {
    return this.call("PUT", `/layers/${encodeURIComponent(layer)}/features/${id}`, patch);
  }

  remove(layer: string, id: number): Promise<ChangeSet> {
    return this.call("DELETE", `/layers/${encodeURIComponent(layer)}/features/${id}`);
  }

  changes(since: number, max?: number): Promise<ChangesPage> {
    const m = max === undefined ? "" : `&max=${max}`;
    return this.call("GET", `/changes?since=${since}${m}`);
  }

  reportExtent(bbox: BBox, scale: number, t?: number): Promise<{ accepted: boolean }> {
    return this.call("POST", "/extents", t === undefined ? { bbox, scale } : { bbox, scale, t });
  }

  conflicts(): Promise<FeatureCollection> {
    return this.call("GET", "/conflicts");
  }

  private async call<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = {};
    if (body !== undefined) {
      headers["Content-Type"] = "application/json";
    }
    if (this.session) {
      headers["X-Session"] = this.session;
    }
    let res: Response;
    try {
      res = await this.fetchFn(this.base + path, {
        method,
        headers,
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (e) {
      throw new NetworkError(e instanceof Error ? e.message : String(e));
    }
    const text = await res.text();
    const parsed = text ? JSON.parse(text) : null;
    if (!res.ok) {
      throw new ApiError(res.status, parsed ?? { code: "Http" + res.status, message: res.statusText });
    }
    return parsed as T;
  }
}
