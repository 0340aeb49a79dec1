import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { ApiClient, type FetchFn } from "../src/api";
import { sendEdit } from "../src/gestures";
import { FeedMirror, SseParser } from "../src/mirror";
import type { ChangeRecord } from "../src/types";

const cli = process.env.STREETBASE_CLI;

describe.skipIf(!cli)("against a running service", () => {
  let dir = "";
  let server: ChildProcess;
  let base = "";

  beforeAll(async () => {
    dir = mkdtempSync(join(tmpdir(), "streetbase-webui-"));
    const project = join(dir, "demo");
    expect(spawnSync(cli!, ["demo", "--project", project]).status).toBe(0);
    server = spawn(cli!, ["serve", "--project", project, "--port", "0"]);
    base = await new Promise<string>((resolve, reject) => {
      let out = "";
      server.stdout!.on("data", (d: Buffer) => {
        out += d.toString();
        const m = out.match(/on (http:\/\/[\d.]+:\d+)/);
        if (m) {
          resolve(m[1]);
        }
      });
      server.on("exit", (code) => reject(new Error(`server exited with ${code}`)));
    });
  });

  afterAll(() => {
    server?.kill("SIGTERM");
    rmSync(dir, { recursive: true, force: true });
  });

  it("gestures are single calls and the feed keeps the mirror equal to fresh reads", async () => {
    const calls: string[] = [];
    const counting: FetchFn = (url, init) => {
      calls.push(`${init?.method ?? "GET"} ${new URL(url).pathname}`);
      return fetch(url, init);
    };
    const api = new ApiClient(base, counting);
    await api.openSession("ana");
    const physical = (await api.layers()).filter((l) => l.kind === "physical").map((l) => l.name);
    const mirror = new FeedMirror(new Set(["section", "intersection", "intersection_limit"]));
    await mirror.reload(api, physical);

    const limit = (await api.list("ctl_intersection_limit")).features[0];
    const [x, y] = limit.geometry!.type === "Point" ? limit.geometry!.coordinates : [0, 0];
    calls.length = 0;
    const out = await sendEdit(api, {
      kind: "drag-end",
      layer: "ctl_intersection_limit",
      id: limit.id,
      geometry: { type: "Point", coordinates: [x + 0.5, y + 0.5] },
    });
    expect(out.ok).toBe(true);
    expect(calls).toEqual([`PUT /layers/ctl_intersection_limit/features/${limit.id}`]);

    const ops = (await mirror.resume(api, physical)) ?? [];
    const redrawn = new Set(ops.map((o) => o.layer));
    expect(redrawn.has("section")).toBe(true);
    expect(redrawn.has("intersection")).toBe(true);

    const ic = (await api.list("edit_interconnection")).features[0];
    calls.length = 0;
    expect((await sendEdit(api, { kind: "delete", layer: "edit_interconnection", id: ic.id })).ok).toBe(true);
    expect(calls).toEqual([`DELETE /layers/edit_interconnection/features/${ic.id}`]);
    expect((await api.get("interconnection_merged", ic.id)).properties.allowed).toBe(false);

    const bad = await sendEdit(api, {
      kind: "attribute-commit",
      layer: "edit_edge",
      id: (await api.list("edit_edge")).features[0].id,
      properties: { width: 0 },
    });
    expect(bad).toMatchObject({ ok: false, reason: "server", status: 422 });

    await mirror.resume(api, physical);
    for (const name of physical) {
      const fresh = new Map((await api.list(name)).features.map((f) => [f.id, f]));
      expect(new Map(mirror.features(name))).toEqual(fresh);
    }
  });

  it("the event stream delivers changes made by another session", async () => {
    const watcher = new ApiClient(base);
    const { last } = await watcher.changes(Number.MAX_SAFE_INTEGER, 0).catch(() => ({ last: 0 }));
    const controller = new AbortController();
    const res = await fetch(`${base}/feed?since=${last}`, { signal: controller.signal });
    const reader = res.body!.getReader();
    const parser = new SseParser();
    const seen: ChangeRecord[] = [];

    const editor = new ApiClient(base);
    await editor.openSession("bob");
    const node = (await editor.list("edit_node")).features[0];
    const [x, y] = node.geometry!.type === "Point" ? node.geometry!.coordinates : [0, 0];
    await editor.update("edit_node", node.id, { geometry: { type: "Point", coordinates: [x + 1, y] } });
    const target = (await editor.changes(last)).last;

    const decoder = new TextDecoder();
    while (seen.length === 0 || seen[seen.length - 1].sequence < target) {
      const { value, done } = await reader.read();
      if (done) {
        break;
      }
      for (const ev of parser.push(decoder.decode(value))) {
        if (ev.event === "change") {
          seen.push(JSON.parse(ev.data));
        }
      }
    }
    controller.abort();
    expect(seen.map((r) => r.sequence)).toEqual(Array.from({ length: target - last }, (_, i) => last + i + 1));
    expect(seen.some((r) => r.layer === "road_node" && r.session === "bob@127.0.0.1")).toBe(true);
  });
});
